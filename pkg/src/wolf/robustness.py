"""Posterior influence function (PIF) diagnostics.

The PIF of a Gaussian filter is the KL divergence between the posterior
obtained with a contaminated last measurement and the clean posterior.
For ensembles the KL is replaced by the empirical 2-Wasserstein distance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from wolf.core_math import GaussianBelief, gaussian_kl, logdet_spd, spd_inverse
from wolf.ensemble_filters import Ensemble
from wolf.gaussian_filters import (
    LinearDynamics,
    LinearObservation,
    kf_predict,
    kf_update,
    wolf_update,
)
from wolf.weights import WeightSpec

UpdateFn = Callable[[GaussianBelief, np.ndarray], GaussianBelief]

W2_EXACT_MAX = 512


def pif_gaussian(clean: GaussianBelief, contaminated: GaussianBelief, reverse: bool = False) -> float:
    """KL(contaminated || clean); ``reverse=True`` gives KL(clean || contaminated)."""
    if reverse:
        return gaussian_kl(clean, contaminated)
    return gaussian_kl(contaminated, clean)


def make_update(obs: LinearObservation, spec: WeightSpec | None = None) -> UpdateFn:
    """Update function for the KF (``spec=None``) or a WoLF weighting."""
    if spec is None:
        return lambda pred, y: kf_update(pred, obs, y).posterior
    return lambda pred, y: wolf_update(pred, obs, y, spec).posterior


@dataclass(frozen=True)
class GridSpec:
    low: float = -5.0
    high: float = 5.0
    n: int = 41

    def axis(self) -> np.ndarray:
        return np.linspace(self.low, self.high, self.n)


@dataclass(frozen=True)
class PifGrid:
    eps1: np.ndarray
    eps2: np.ndarray
    values: np.ndarray  # values[i, j] at (eps1[i], eps2[j])
    label: str
    t: int

    def max(self) -> float:
        return float(self.values.max())

    def rows(self):
        for i, a in enumerate(self.eps1):
            for j, b in enumerate(self.eps2):
                yield float(a), float(b), float(self.values[i, j])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["eps1", "eps2", "pif"])
            for a, b, v in self.rows():
                writer.writerow([repr(a), repr(b), repr(v)])


def filter_to_last(update: UpdateFn, dyn: LinearDynamics, prior: GaussianBelief,
                   measurements: np.ndarray) -> GaussianBelief:
    """Run predict/update over all but the last measurement, then predict once more."""
    belief = prior
    for y in measurements[:-1]:
        belief = update(kf_predict(belief, dyn), y)
    return kf_predict(belief, dyn)


def pif_grid(update: UpdateFn, dyn: LinearDynamics, prior: GaussianBelief, measurements,
             grid: GridSpec = GridSpec(), label: str = "", reverse: bool = False,
             grid2: GridSpec | None = None) -> PifGrid:
    """PIF over a grid of additive contaminations of the last measurement."""
    measurements = np.atleast_2d(np.asarray(measurements, dtype=float))
    if measurements.shape[0] < 2:
        raise ValueError("need a history of at least two measurements")
    pred = filter_to_last(update, dyn, prior, measurements)
    y_last = measurements[-1]
    clean = update(pred, y_last)
    e1, e2 = grid.axis(), (grid2 or grid).axis()
    values = np.empty((e1.size, e2.size))
    for i, a in enumerate(e1):
        for j, b in enumerate(e2):
            contaminated = update(pred, y_last + np.array([a, b]))
            values[i, j] = pif_gaussian(clean, contaminated, reverse)
    return PifGrid(e1, e2, values, label, measurements.shape[0])


def kf_pif_closed_form(pred: GaussianBelief, obs: LinearObservation, delta) -> float:
    """Quadratic PIF of the plain KF: ``0.5 d' K' Sigma^{-1} K d``."""
    out = kf_update(pred, obs, obs.H @ pred.mean)
    post = out.posterior
    K = post.cov @ obs.H.T @ obs.R.inverse()
    delta = np.asarray(delta, dtype=float)
    return float(0.5 * delta @ K.T @ spd_inverse(post.cov) @ K @ delta)


def sup_weighted_residual(spec: WeightSpec, R) -> float:
    """Upper bound on ``W(y, yhat)^2 * ||y - yhat||`` over all ``y``."""
    lam_max = float(np.linalg.eigvalsh(np.atleast_2d(R)).max())
    if spec.kind == "imq":
        return spec.c / 2.0
    if spec.kind == "md":
        return spec.c * np.sqrt(lam_max) / 2.0
    if spec.kind == "tmd":
        return float(np.sqrt(spec.c * lam_max))
    if spec.kind == "constant" and spec.w0 == 0:
        return 0.0
    raise ValueError(f"{spec.kind} weighting has no finite bound")


def wolf_pif_bound(pred: GaussianBelief, obs: LinearObservation, y, spec: WeightSpec) -> float:
    """Contamination-free upper bound on the WoLF PIF, KL(contaminated || clean).

    The trace, Mahalanobis and log-determinant terms of the KL are bounded
    separately using only ``sup W <= 1`` and ``sup W^2 ||e|| < inf``.
    """
    y = np.asarray(y, dtype=float)
    H, R_inv = obs.H, obs.R.inverse()
    m = pred.dim
    info = H.T @ R_inv @ H
    clean = wolf_update(pred, obs, y, spec)
    post = clean.posterior
    post_prec = spd_inverse(post.cov)
    prec_pred = spd_inverse(pred.cov)
    w_clean = float(clean.weight) ** 2
    # contaminated covariance lies between the clean-free posterior (w=1) and the prior
    trace_term = np.trace(post_prec) * np.trace(pred.cov) - m
    K = post.cov @ H.T @ R_inv
    lam_clean = np.linalg.eigvalsh(K.T @ post_prec @ K).max()
    clean_shift = 2.0 * lam_clean * (w_clean * np.linalg.norm(y - H @ pred.mean)) ** 2
    K_bound = np.linalg.norm(pred.cov, 2) * np.linalg.norm(H.T @ R_inv, 2)
    lam_cont = np.linalg.eigvalsh(post_prec).max() * K_bound**2
    cont_shift = 2.0 * lam_cont * sup_weighted_residual(spec, obs.R.matrix) ** 2
    logdet_term = logdet_spd(post.cov) + logdet_spd(prec_pred + info)
    return 0.5 * (trace_term + clean_shift + cont_shift + logdet_term)


@dataclass(frozen=True)
class W2Result:
    distance: float
    exact: bool


def pif_ensemble_w2(clean: Ensemble, contaminated: Ensemble) -> W2Result:
    """Empirical 2-Wasserstein distance between two equal-size ensembles.

    Exact by optimal assignment up to ``W2_EXACT_MAX`` particles; above that the
    identity pairing is returned as an upper bound with ``exact=False``.
    """
    a, b = clean.particles, contaminated.particles
    if a.shape != b.shape:
        raise ValueError(f"ensembles differ in shape: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n > W2_EXACT_MAX:
        return W2Result(identity_w2(a, b), False)
    cost = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return W2Result(float(np.sqrt(cost[rows, cols].sum() / n)), True)


def identity_w2(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum((np.atleast_2d(a) - np.atleast_2d(b)) ** 2, axis=-1))))
