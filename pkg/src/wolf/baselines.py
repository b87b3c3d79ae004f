"""Comparison filters: variational inverse-Wishart KF (KF-IW), Bernoulli KF (KF-B), Adam OGD."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from wolf.core_math import GaussianBelief, SpdMatrix, spd_inverse, symmetrize
from wolf.gaussian_filters import LinearObservation, NonlinearModel, jacobian

# Bernoulli coefficients B_2k / (2k) for the digamma asymptotic series
_DIGAMMA_SERIES = (
    1.0 / 12, -1.0 / 120, 1.0 / 252, -1.0 / 240, 1.0 / 132, -691.0 / 32760, 1.0 / 12,
)


def digamma(x: float) -> float:
    """Digamma for positive ``x``: upward recurrence to ``x >= 6`` then the asymptotic series."""
    if not x > 0:
        raise ValueError(f"digamma is only defined here for positive arguments, got {x}")
    shift = 0.0
    while x < 6.0:
        shift -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for coef in _DIGAMMA_SERIES:
        series += coef * power
        power *= inv2
    return shift + math.log(x) - 0.5 / x - series


def _linearise(obs, mean_pred: np.ndarray):
    """Return (H, h) where h is the observation map (exact for linear models)."""
    if isinstance(obs, LinearObservation):
        H = obs.H
        return H, obs.R, (lambda x: H @ x)
    H = jacobian(obs.h, mean_pred, obs.h_jac)
    return H, obs.R, (lambda x: np.atleast_1d(obs.h(x)))


@dataclass(frozen=True)
class KfIwConfig:
    ell: float = 1.0
    inner_iters: int = 1
    R0: SpdMatrix | None = None

    def __post_init__(self):
        if not self.ell > 0:
            raise ValueError("noise scaling ell must be positive")
        if self.inner_iters < 1:
            raise ValueError("need at least one inner iteration")
        if self.R0 is not None:
            object.__setattr__(self, "R0", SpdMatrix.of(self.R0))


def kfiw_update(prior: GaussianBelief, obs: LinearObservation | NonlinearModel, y,
                cfg: KfIwConfig) -> GaussianBelief:
    """Variational update with an inverse-Wishart measurement covariance.

    The gain is kept in the transposed ``d x m`` layout, and every inner pass
    rebuilds the covariance from the predicted one in Joseph form.  For a
    nonlinear model, ``H mu`` is read as the linearisation about the predicted mean.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mu_pred, cov_pred = prior.mean, prior.cov
    H, R, h = _linearise(obs, mu_pred)
    R0 = (cfg.R0 or R).matrix
    yhat = h(mu_pred)
    ell = cfg.ell
    eye = np.eye(prior.dim)
    HPp = H @ cov_pred
    HPpHt = HPp @ H.T
    mu, cov = mu_pred, cov_pred
    for _ in range(cfg.inner_iters):
        resid = y - (yhat + H @ (mu - mu_pred))
        S = np.outer(resid, resid) + H @ cov @ H.T
        Lam = (ell * R0 + S) / (ell + 1.0)
        K = SpdMatrix(HPpHt + Lam).solve(HPp)
        mu = mu_pred + K.T @ (y - yhat)
        A = eye - K.T @ H
        cov = symmetrize(K.T @ Lam @ K + A @ cov_pred @ A.T)
    return GaussianBelief(mu, cov)


@dataclass(frozen=True)
class KfBConfig:
    alpha0: float = 1.0
    beta0: float = 1.0
    inner_iters: int = 1
    tol: float = 1e-4

    def __post_init__(self):
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise ValueError("prior rates must be positive")
        if self.inner_iters < 1:
            raise ValueError("need at least one inner iteration")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")


def kfb_update(prior: GaussianBelief, obs: LinearObservation | NonlinearModel, y, cfg: KfBConfig,
               trace: list | None = None) -> GaussianBelief:
    """Bernoulli-outlier variational update.

    ``rho`` is the posterior probability that the measurement is an inlier;
    the Gaussian update uses ``R / rho`` and is skipped once ``rho < tol``.
    Refreshed ``rho`` values are appended to ``trace`` when given.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mu_pred, cov_pred = prior.mean, prior.cov
    H, R, h = _linearise(obs, mu_pred)
    R_inv = R.inverse()
    yhat = h(mu_pred)
    prec_pred = spd_inverse(cov_pred)
    info = H.T @ R_inv @ H
    linear = isinstance(obs, LinearObservation)
    rho, a_post, b_post = 1.0, cfg.alpha0, cfg.beta0
    mu, cov = mu_pred, cov_pred
    for _ in range(cfg.inner_iters):
        if rho < cfg.tol:
            mu, cov = mu_pred, cov_pred
        else:
            cov = symmetrize(spd_inverse(prec_pred + rho * info))
            mu = mu_pred + rho * cov @ H.T @ R_inv @ (y - yhat)
        # E[(y - h(theta))(y - h(theta))'] under N(mu, cov), linearised at mu
        H_mu = H if linear else jacobian(obs.h, mu, obs.h_jac)
        r = y - h(mu)
        B = np.outer(r, r) + H_mu @ cov @ H_mu.T
        total = digamma(a_post + b_post + 1.0)
        log_pi = digamma(a_post) - total
        log_not_pi = digamma(b_post + 1.0) - total
        z = log_pi - 0.5 * float(np.sum(B * R_inv)) - log_not_pi
        rho = 1.0 / (1.0 + math.exp(-z)) if z > -700 else 0.0
        a_post = cfg.alpha0 + rho
        b_post = cfg.beta0 + 1.0 - rho
        if trace is not None:
            trace.append(rho)
    return GaussianBelief(mu, cov)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    inner_iters: int = 1

    @classmethod
    def zeros(cls, n: int, **kwargs) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kwargs)


def adam_ogd_step(params, grad_fn, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """Run ``state.inner_iters`` bias-corrected Adam iterations on one measurement's loss."""
    params = np.array(params, dtype=float)
    b1, b2 = state.betas
    m, v, t = state.m.copy(), state.v.copy(), state.step
    for _ in range(state.inner_iters):
        g = np.asarray(grad_fn(params), dtype=float)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
        t += 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, replace(state, m=m, v=v, step=t)
