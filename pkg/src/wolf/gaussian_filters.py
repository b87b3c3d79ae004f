"""Kalman, weighted (WoLF) and extended Kalman predict/update steps.

Updates are defined in precision form: the observation enters as
``H' Rbar^{-1} H`` added to the prior precision, where ``Rbar^{-1}`` is
``w^2 R^{-1}`` for a scalar weight and ``Diag(w) R^{-1} Diag(w)`` for
per-dimension weights.  A zero weight leaves the prior untouched.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from wolf.core_math import (
    GaussianBelief,
    NotSpdError,
    SpdMatrix,
    symmetrize,
)
from wolf.weights import WeightSpec, compute_weight, compute_weight_vector

VectorFn = Callable[[np.ndarray], np.ndarray]

Q_JITTER = 1e-12


def _psd_with_jitter(Q) -> tuple[SpdMatrix, bool]:
    Q = symmetrize(np.atleast_2d(np.asarray(Q, dtype=float)))
    try:
        return SpdMatrix(Q), False
    except NotSpdError:
        scale = max(1.0, float(np.max(np.abs(Q))))
        if np.linalg.eigvalsh(Q).min() < -1e-12 * scale:
            raise NotSpdError("process noise covariance is not positive semi-definite") from None
        return SpdMatrix(Q + Q_JITTER * np.eye(Q.shape[0])), True


@dataclass(frozen=True)
class LinearDynamics:
    F: np.ndarray
    Q: SpdMatrix
    jittered: bool = field(default=False, init=False)

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        Q, jittered = _psd_with_jitter(self.Q.matrix if isinstance(self.Q, SpdMatrix) else self.Q)
        if F.shape != (Q.dim, Q.dim):
            raise ValueError(f"F has shape {F.shape} but Q is {Q.dim}x{Q.dim}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "jittered", jittered)


@dataclass(frozen=True)
class LinearObservation:
    H: np.ndarray
    R: SpdMatrix

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = SpdMatrix.of(self.R)
        if H.shape[0] != R.dim:
            raise ValueError(f"H has {H.shape[0]} rows but R is {R.dim}x{R.dim}")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)


@dataclass(frozen=True)
class NonlinearModel:
    """Dynamics ``f`` and observation ``h`` with optional analytic Jacobians.

    ``vectorized`` declares that ``f`` maps an ``N x m`` batch row-wise, which
    the ensemble filters exploit.  When ``probe`` is given, analytic Jacobians
    are checked against finite differences at that point on construction.
    """

    f: VectorFn
    h: VectorFn
    Q: SpdMatrix
    R: SpdMatrix
    f_jac: VectorFn | None = None
    h_jac: VectorFn | None = None
    vectorized: bool = False
    probe: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "Q", _psd_with_jitter(self.Q.matrix if isinstance(self.Q, SpdMatrix) else self.Q)[0])
        object.__setattr__(self, "R", SpdMatrix.of(self.R))
        if self.probe is not None:
            self.check_jacobians(np.asarray(self.probe, dtype=float))

    @property
    def state_dim(self) -> int:
        return self.Q.dim

    @property
    def obs_dim(self) -> int:
        return self.R.dim

    def check_jacobians(self, x: np.ndarray, rtol: float = 1e-4):
        for fn, jac, name in ((self.f, self.f_jac, "f"), (self.h, self.h_jac, "h")):
            if jac is None:
                continue
            analytic = np.atleast_2d(jac(x))
            numeric = jacobian(fn, x)
            scale = max(1.0, float(np.max(np.abs(numeric))))
            if np.max(np.abs(analytic - numeric)) > rtol * scale:
                raise ValueError(f"analytic Jacobian of {name} disagrees with finite differences")

    def with_observation(self, h: VectorFn, h_jac: VectorFn | None = None) -> "NonlinearModel":
        """Cheap copy with a new observation map, e.g. one closing over the current input."""
        new = copy.copy(self)
        object.__setattr__(new, "h", h)
        object.__setattr__(new, "h_jac", h_jac)
        return new

    @classmethod
    def from_linear(cls, dyn: LinearDynamics, obs: LinearObservation) -> "NonlinearModel":
        F, H = dyn.F, obs.H
        return cls(
            f=lambda x: x @ F.T, h=lambda x: x @ H.T, Q=dyn.Q, R=obs.R,
            f_jac=lambda x: F, h_jac=lambda x: H, vectorized=True,
        )


@dataclass(frozen=True)
class UpdateOutcome:
    posterior: GaussianBelief
    weight: float | np.ndarray
    innovation: np.ndarray
    gain_norm: float


def kf_predict(prior: GaussianBelief, dyn: LinearDynamics) -> GaussianBelief:
    F = dyn.F
    if F.shape[1] != prior.dim:
        raise ValueError(f"F has {F.shape[1]} columns but the state has dimension {prior.dim}")
    return GaussianBelief(F @ prior.mean, symmetrize(F @ prior.cov @ F.T + dyn.Q.matrix))


def _check_obs(prior: GaussianBelief, H: np.ndarray, y: np.ndarray):
    if H.shape[1] != prior.dim:
        raise ValueError(f"H has {H.shape[1]} columns but the state has dimension {prior.dim}")
    if y.shape != (H.shape[0],):
        raise ValueError(f"measurement of shape {y.shape} does not match H with {H.shape[0]} rows")


def _precision_update(prior: GaussianBelief, H, obs_precision, innovation) -> tuple[GaussianBelief, float]:
    """Posterior from prior precision plus ``H' P H`` for an observation precision ``P``.

    Evaluated through the push-through form ``K = Sigma H' (I + P H Sigma H')^{-1} P``,
    which costs O(m^2 d) and stays valid when ``P`` is singular.
    """
    SHt = prior.cov @ H.T
    A = np.eye(H.shape[0]) + obs_precision @ (H @ SHt)
    gain = SHt @ np.linalg.solve(A, obs_precision)
    # GaussianBelief symmetrizes the covariance
    return GaussianBelief(prior.mean + gain @ innovation, prior.cov - gain @ SHt.T), float(np.linalg.norm(gain))


def _scalar_weighted(prior: GaussianBelief, H, R: SpdMatrix, y, yhat, w: float) -> UpdateOutcome:
    innovation = y - yhat
    if w == 0.0:
        return UpdateOutcome(prior, 0.0, innovation, 0.0)
    post, gnorm = _precision_update(prior, H, w**2 * R.inverse(), innovation)
    return UpdateOutcome(post, w, innovation, gnorm)


def _dimwise_weighted(prior: GaussianBelief, H, R: SpdMatrix, y, yhat, w: np.ndarray) -> UpdateOutcome:
    innovation = y - yhat
    if not np.any(w):
        return UpdateOutcome(prior, w, innovation, 0.0)
    obs_precision = w[:, None] * R.inverse() * w[None, :]
    # zero-weight residuals may be non-finite; they carry no precision
    post, gnorm = _precision_update(prior, H, obs_precision, np.where(w > 0, innovation, 0.0))
    return UpdateOutcome(post, w, innovation, gnorm)


def kf_update(prior: GaussianBelief, obs: LinearObservation, y) -> UpdateOutcome:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    _check_obs(prior, obs.H, y)
    return _scalar_weighted(prior, obs.H, obs.R, y, obs.H @ prior.mean, 1.0)


def wolf_update(prior: GaussianBelief, obs: LinearObservation, y, spec: WeightSpec) -> UpdateOutcome:
    """Weighted-likelihood update: the KF update with ``R^{-1}`` scaled by ``W^2``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    _check_obs(prior, obs.H, y)
    yhat = obs.H @ prior.mean
    if spec.is_vector:
        w = compute_weight_vector(spec, y, yhat, np.diag(obs.R.matrix))
        return _dimwise_weighted(prior, obs.H, obs.R, y, yhat, w)
    w = compute_weight(spec, y, yhat, obs.R)
    return _scalar_weighted(prior, obs.H, obs.R, y, yhat, w)


def wolf_update_dimwise(prior: GaussianBelief, obs: LinearObservation, y, w) -> UpdateOutcome:
    """Update with observation precision ``Diag(w) R^{-1} Diag(w)``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    _check_obs(prior, obs.H, y)
    if w.shape != y.shape or np.any((w < 0) | (w > 1)):
        raise ValueError("dimension weights must have one entry in [0, 1] per observation")
    return _dimwise_weighted(prior, obs.H, obs.R, y, obs.H @ prior.mean, w)


def jacobian(fn: VectorFn, x, analytic: VectorFn | None = None) -> np.ndarray:
    """Jacobian of ``fn`` at ``x``; central differences unless ``analytic`` is given.

    Row ``i`` holds the partial derivatives of output ``i``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if analytic is not None:
        return np.atleast_2d(np.asarray(analytic(x), dtype=float))
    steps = 1e-6 * np.maximum(1.0, np.abs(x))
    cols = []
    for i, step in enumerate(steps):
        dx = np.zeros_like(x)
        dx[i] = step
        hi = np.atleast_1d(fn(x + dx))
        lo = np.atleast_1d(fn(x - dx))
        if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
            raise FloatingPointError(f"map is not finite at probe points around coordinate {i}")
        cols.append((hi - lo) / (2.0 * step))
    return np.column_stack(cols)


def ekf_predict(prior: GaussianBelief, model: NonlinearModel) -> GaussianBelief:
    F = jacobian(model.f, prior.mean, model.f_jac)
    mean = np.atleast_1d(model.f(prior.mean))
    if not np.all(np.isfinite(mean)):
        raise FloatingPointError("dynamics map returned non-finite values")
    return GaussianBelief(mean, symmetrize(F @ prior.cov @ F.T + model.Q.matrix))


def ekf_update(prior: GaussianBelief, model: NonlinearModel, y, spec: WeightSpec | None = None) -> UpdateOutcome:
    """Linearised (weighted) update; ``spec=None`` or ``Constant(1)`` is the plain EKF."""
    spec = spec or WeightSpec.constant(1.0)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    yhat = np.atleast_1d(model.h(prior.mean))
    H = jacobian(model.h, prior.mean, model.h_jac)
    _check_obs(prior, H, y)
    if spec.is_vector:
        w = compute_weight_vector(spec, y, yhat, np.diag(model.R.matrix))
        return _dimwise_weighted(prior, H, model.R, y, yhat, w)
    w = compute_weight(spec, y, yhat, model.R)
    return _scalar_weighted(prior, H, model.R, y, yhat, w)
