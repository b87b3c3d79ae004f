"""Ensemble Kalman filter with weighted (AP/PP), Huberised and inflated variants.

Predictions are always sampled for every observation dimension, particle-major
then dimension-minor, so variants sharing an :class:`RngStream` draw identical
noise and collapse to the plain EnKF when no dimension is down-weighted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wolf.core_math import RngStream, SpdMatrix
from wolf.gaussian_filters import NonlinearModel


class SingularGainError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Ensemble:
    """``N x m`` particle matrix; rows are state samples."""

    particles: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.particles, dtype=float))
        if p.shape[0] < 2:
            raise ValueError("an ensemble needs at least two particles")
        if not np.all(np.isfinite(p)):
            raise FloatingPointError("ensemble has non-finite particles")
        object.__setattr__(self, "particles", p)

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def mean(self) -> np.ndarray:
        return self.particles.mean(axis=0)

    def cov(self) -> np.ndarray:
        return np.cov(self.particles, rowvar=False, ddof=1).reshape(self.dim, self.dim)


@dataclass(frozen=True)
class EnsembleGain:
    """Sample gain over the observation dimensions listed in ``dims``."""

    gain: np.ndarray
    dims: np.ndarray


def _map_rows(fn, x: np.ndarray, vectorized: bool) -> np.ndarray:
    if vectorized:
        return np.asarray(fn(x), dtype=float).reshape(x.shape[0], -1)
    return np.array([np.atleast_1d(fn(row)) for row in x], dtype=float)


def enkf_predict(ens: Ensemble, model: NonlinearModel, rng: RngStream) -> Ensemble:
    moved = _map_rows(model.f, ens.particles, model.vectorized)
    if not np.all(np.isfinite(moved)):
        raise FloatingPointError("dynamics map returned non-finite particles")
    noise = rng.normal(moved.shape) @ model.Q.chol.T
    return Ensemble(moved + noise)


def enkf_gain(ens_states: Ensemble, ens_preds: np.ndarray, mask=None) -> EnsembleGain:
    """Sample cross-covariance times inverse sample prediction variance (N - 1 convention)."""
    preds = np.atleast_2d(np.asarray(ens_preds, dtype=float))
    n = ens_states.size
    if preds.shape[0] != n:
        raise ValueError("need one prediction per particle")
    dims = np.arange(preds.shape[1]) if mask is None else np.flatnonzero(np.asarray(mask, dtype=bool))
    if dims.size == 0:
        return EnsembleGain(np.zeros((ens_states.dim, 0)), dims)
    x_dev = ens_states.particles - ens_states.particles.mean(axis=0)
    sub = preds[:, dims]
    y_dev = sub - sub.mean(axis=0)
    cross = x_dev.T @ y_dev / (n - 1)
    var = y_dev.T @ y_dev / (n - 1)
    try:
        fac = SpdMatrix(var)
    except np.linalg.LinAlgError:
        raise SingularGainError("sample prediction variance is singular") from None
    return EnsembleGain(fac.solve(cross.T).T, dims)


def sample_predictions(ens: Ensemble, model: NonlinearModel, rng: RngStream) -> np.ndarray:
    means = _map_rows(model.h, ens.particles, model.vectorized)
    return means + rng.normal(means.shape) @ model.R.chol.T


def _apply(ens: Ensemble, gain: EnsembleGain, resid: np.ndarray) -> Ensemble:
    return Ensemble(ens.particles + resid[:, gain.dims] @ gain.gain.T)


def enkf_update(ens: Ensemble, model: NonlinearModel, y, rng: RngStream) -> Ensemble:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    preds = sample_predictions(ens, model, rng)
    gain = enkf_gain(ens, preds)
    return _apply(ens, gain, y - preds)


def average_particle_weights(y, preds: np.ndarray, c: float) -> np.ndarray:
    return (np.mean((y - preds) ** 2, axis=0) <= c).astype(float)


def ap_enkf_update(ens: Ensemble, model: NonlinearModel, y, c: float, rng: RngStream,
                   masked_gain: bool = False) -> tuple[Ensemble, np.ndarray]:
    """Average-particle weighting: drop dimension j when its mean squared error exceeds ``c``.

    By default the gain uses every dimension and the weights mask the residual
    (``K Diag(w) (y - yhat)``).  ``masked_gain=True`` instead builds the gain
    from the kept dimensions only.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    preds = sample_predictions(ens, model, rng)
    w = average_particle_weights(y, preds, c)
    if masked_gain:
        gain = enkf_gain(ens, preds, w > 0)
        return _apply(ens, gain, y - preds), w
    gain = enkf_gain(ens, preds)
    return _apply(ens, gain, (y - preds) * w), w


def pp_enkf_update(ens: Ensemble, model: NonlinearModel, y, c: float,
                   rng: RngStream) -> tuple[Ensemble, np.ndarray]:
    """Per-particle weighting: each particle ignores its own out-of-threshold dimensions."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    preds = sample_predictions(ens, model, rng)
    resid = y - preds
    w = (resid**2 <= c).astype(float)
    gain = enkf_gain(ens, preds)
    return _apply(ens, gain, resid * w), w


def huber_clip(z: np.ndarray, c: float) -> np.ndarray:
    return np.clip(z, -c, c)


def hub_enkf_update(ens: Ensemble, model: NonlinearModel, y, c: float, rng: RngStream) -> Ensemble:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    preds = sample_predictions(ens, model, rng)
    gain = enkf_gain(ens, preds)
    return _apply(ens, gain, huber_clip(y - preds, c))


def inflate(ens: Ensemble, lam: float) -> Ensemble:
    """Multiplicative inflation of the deviations about the ensemble mean."""
    if not lam >= 1.0:
        raise ValueError(f"inflation factor must be >= 1, got {lam}")
    mean = ens.mean()
    return Ensemble(mean + lam * (ens.particles - mean))
