"""Robust Kalman-type filtering with weighted observation likelihoods."""

from wolf.core_math import GaussianBelief, RngStream, SpdMatrix, gaussian_kl
from wolf.gaussian_filters import (
    LinearDynamics,
    LinearObservation,
    NonlinearModel,
    ekf_predict,
    ekf_update,
    kf_predict,
    kf_update,
    wolf_update,
)
from wolf.weights import WeightSpec, compute_weight

__all__ = [
    "GaussianBelief", "LinearDynamics", "LinearObservation", "NonlinearModel", "RngStream",
    "SpdMatrix", "WeightSpec", "compute_weight", "ekf_predict", "ekf_update", "gaussian_kl",
    "kf_predict", "kf_update", "wolf_update",
]
