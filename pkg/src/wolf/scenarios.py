"""Data generators, models and metrics for the three benchmark problems.

* 2D constant-velocity tracking with Student-t or mean-shift contamination
* Lorenz96 integrated with RK4, with spike outliers in the measurements
* a 1d nonlinear regression stream fitted online by an MLP
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from wolf.core_math import RngStream
from wolf.gaussian_filters import LinearDynamics, LinearObservation, NonlinearModel

VARIANTS = ("clean", "student", "mixture")


# ---------------------------------------------------------------------------
# 2D tracking


@dataclass(frozen=True)
class Tracking2dConfig:
    dt: float = 0.1
    q: float = 0.10
    r: float = 10.0
    steps: int = 1000
    variant: str = "student"
    nu: float = 2.01
    p_eps: float = 0.05
    init_scale: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown tracking variant {self.variant!r}; expected one of {VARIANTS}")
        if self.dt <= 0 or self.q < 0 or self.r < 0 or self.nu <= 0 or self.init_scale < 0:
            raise ValueError("tracking parameters must be positive")
        if not 0.0 <= self.p_eps <= 1.0:
            raise ValueError("p_eps must lie in [0, 1]")
        if self.steps < 1:
            raise ValueError("need at least one step")

    def transition(self) -> np.ndarray:
        F = np.eye(4)
        F[0, 2] = F[1, 3] = self.dt
        return F

    @staticmethod
    def selector() -> np.ndarray:
        return np.eye(2, 4)

    def model(self) -> tuple[LinearDynamics, LinearObservation]:
        """The nominal Gaussian model the filters assume."""
        return (LinearDynamics(self.transition(), self.q * np.eye(4)),
                LinearObservation(self.selector(), self.r * np.eye(2)))


@dataclass(frozen=True)
class TrackingData:
    states: np.ndarray        # T x 4
    measurements: np.ndarray  # T x 2
    outliers: np.ndarray      # T, bool
    initial: np.ndarray       # state at t = 0


def tracking2d_generate(cfg: Tracking2dConfig, rng: RngStream, tau: np.ndarray | None = None) -> TrackingData:
    """Simulate the tracking model.  ``tau`` overrides the Student scale draws."""
    F, H = cfg.transition(), cfg.selector()
    T = cfg.steps
    theta = cfg.init_scale * rng.normal(4)
    initial = theta.copy()
    states = np.empty((T, 4))
    for t in range(T):
        theta = F @ theta + np.sqrt(cfg.q) * rng.normal(4)
        states[t] = theta
    means = states @ H.T
    outliers = np.zeros(T, dtype=bool)
    scale = np.full(T, np.sqrt(cfg.r))
    if cfg.variant == "student":
        if tau is None:
            tau = rng.gamma(cfg.nu / 2.0, 2.0 / cfg.nu, T)
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (T,))
        scale = scale / np.sqrt(tau)
    elif cfg.variant == "mixture":
        outliers = rng.uniform(size=T) < cfg.p_eps
        means = np.where(outliers[:, None], 2.0 * means, means)
    measurements = means + scale[:, None] * rng.normal((T, 2))
    return TrackingData(states, measurements, outliers, initial)


# ---------------------------------------------------------------------------
# Lorenz96


def rk4_step(drift: Callable[[np.ndarray], np.ndarray], x, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step; works row-wise on batches when ``drift`` does."""
    x = np.asarray(x, dtype=float)
    k1 = drift(x)
    k2 = drift(x + 0.5 * dt * k1)
    k3 = drift(x + 0.5 * dt * k2)
    k4 = drift(x + dt * k3)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise FloatingPointError("non-finite RK4 stage")
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def lorenz96_drift(x: np.ndarray, forcing) -> np.ndarray:
    """Cyclic Lorenz96 right-hand side along the last axis."""
    return (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1)) * np.roll(x, 1, axis=-1) - x + forcing


@dataclass(frozen=True)
class Lorenz96Config:
    dim: int = 40
    dt: float = 0.05
    steps: int = 60
    forcing: float = 8.0
    forcing_std: float = 1.0
    obs_std: float = 1.0
    p_eps: float = 0.01
    outlier_value: float = 100.0
    particles: int = 500
    init_std: float = 1.0

    def __post_init__(self):
        if self.dim < 4:
            raise ValueError("Lorenz96 needs at least four components")
        if self.dt <= 0 or self.steps < 1 or self.particles < 2:
            raise ValueError("invalid Lorenz96 integration settings")
        if self.forcing_std < 0 or self.obs_std <= 0 or self.init_std < 0:
            raise ValueError("noise scales must be nonnegative")
        if not 0.0 <= self.p_eps <= 1.0:
            raise ValueError("p_eps must lie in [0, 1]")

    def model(self, q: float = 0.0) -> NonlinearModel:
        """Filter model: deterministic forcing with optional additive process noise ``q``.

        With ``q = 0`` the dynamics are treated as noise free; the ensemble
        carries the forcing uncertainty through its spread.
        """
        dt, forcing = self.dt, self.forcing
        f = lambda x: rk4_step(lambda z: lorenz96_drift(z, forcing), x, dt)
        h = lambda x: x
        return NonlinearModel(f, h, q * np.eye(self.dim), self.obs_std**2 * np.eye(self.dim),
                              h_jac=lambda x: np.eye(self.dim), vectorized=True)


@dataclass(frozen=True)
class Lorenz96Data:
    states: np.ndarray
    measurements: np.ndarray
    outliers: np.ndarray  # T x d, bool
    initial: np.ndarray


def lorenz96_generate(cfg: Lorenz96Config, rng: RngStream) -> Lorenz96Data:
    d, T = cfg.dim, cfg.steps
    x = cfg.forcing + cfg.init_std * rng.normal(d)
    initial = x.copy()
    states = np.empty((T, d))
    for t in range(T):
        # forcing noise is held fixed over the four stages of the step
        phi = cfg.forcing + cfg.forcing_std * rng.normal(d)
        try:
            x = rk4_step(lambda z: lorenz96_drift(z, phi), x, cfg.dt)
        except FloatingPointError:
            raise FloatingPointError(f"Lorenz96 state diverged at step {t}") from None
        states[t] = x
    measurements = states + cfg.obs_std * rng.normal((T, d))
    outliers = rng.uniform(size=(T, d)) < cfg.p_eps
    measurements[outliers] = cfg.outlier_value
    return Lorenz96Data(states, measurements, outliers, initial)


# ---------------------------------------------------------------------------
# MLP observation model


@dataclass(frozen=True)
class MlpSpec:
    """ReLU network; parameters are packed as all weight matrices (row-major), then all biases."""

    layers: tuple[int, ...] = (1, 10, 10, 1)
    _shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        layers = tuple(int(n) for n in self.layers)
        if len(layers) < 2 or min(layers) < 1 or layers[-1] != 1:
            raise ValueError(f"invalid layer sizes {layers}; need a scalar output")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "_shapes", tuple(zip(layers[1:], layers[:-1])))

    @classmethod
    def single_hidden(cls, n_in: int, hidden: int = 20) -> "MlpSpec":
        return cls((n_in, hidden, 1))

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self._shapes)

    def unpack(self, params) -> tuple[list[np.ndarray], list[np.ndarray]]:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {params.shape}")
        weights, biases, pos = [], [], 0
        for o, i in self._shapes:
            weights.append(params[pos:pos + o * i].reshape(o, i))
            pos += o * i
        for o, _ in self._shapes:
            biases.append(params[pos:pos + o])
            pos += o
        return weights, biases

    def init_params(self, rng: RngStream, scale: float = 1.0) -> np.ndarray:
        """He-style random initialisation with zero biases."""
        parts = [rng.normal(o * i) * scale * np.sqrt(2.0 / i) for o, i in self._shapes]
        return np.concatenate(parts + [np.zeros(o) for o, _ in self._shapes])


def _forward(spec: MlpSpec, params, x):
    weights, biases = spec.unpack(params)
    a = np.atleast_1d(np.asarray(x, dtype=float))
    if a.shape != (spec.layers[0],):
        raise ValueError(f"input must have {spec.layers[0]} features")
    acts, pre = [a], []
    for k, (W, b) in enumerate(zip(weights, biases)):
        z = W @ a + b
        pre.append(z)
        a = z if k == len(weights) - 1 else np.maximum(z, 0.0)
        acts.append(a)
    return weights, acts, pre


def mlp_apply(spec: MlpSpec, params, x) -> float:
    return float(_forward(spec, params, x)[1][-1][0])


def mlp_jacobian(spec: MlpSpec, params, x) -> np.ndarray:
    """Gradient of the scalar output with respect to the packed parameters (reverse mode)."""
    weights, acts, pre = _forward(spec, params, x)
    n = len(weights)
    grad_w, grad_b = [None] * n, [None] * n
    delta = np.ones(1)
    for k in range(n - 1, -1, -1):
        grad_w[k] = np.outer(delta, acts[k])
        grad_b[k] = delta
        if k > 0:
            # subgradient 0 at the kink
            delta = (weights[k].T @ delta) * (pre[k - 1] > 0)
    return np.concatenate([g.ravel() for g in grad_w] + grad_b)


# ---------------------------------------------------------------------------
# 1d regression stream

TRUE_COEFS = (0.2, -10.0, 1.0, 1.0)


def regression_mean(x, coefs=TRUE_COEFS):
    a, b, c, d = coefs
    x = np.asarray(x, dtype=float)
    return a * x - b * np.cos(c * x * np.pi) + d * x**3


@dataclass(frozen=True)
class RegressionConfig:
    steps: int = 1500
    p_eps: float = 0.05
    sorted: bool = False
    x_range: float = 3.0
    noise_var: float = 3.0
    outlier_range: float = 40.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("need at least one step")
        if not 0.0 <= self.p_eps <= 1.0:
            raise ValueError("p_eps must lie in [0, 1]")
        if self.noise_var < 0 or self.x_range <= 0:
            raise ValueError("invalid regression noise settings")


@dataclass(frozen=True)
class RegressionData:
    x: np.ndarray
    y: np.ndarray
    outliers: np.ndarray


def regression1d_stream(cfg: RegressionConfig, rng: RngStream) -> RegressionData:
    T = cfg.steps
    x = rng.uniform(-cfg.x_range, cfg.x_range, T)
    if cfg.sorted:
        x = np.sort(x)
    y = regression_mean(x) + np.sqrt(cfg.noise_var) * rng.normal(T)
    outliers = rng.uniform(size=T) < cfg.p_eps
    y = np.where(outliers, rng.uniform(-cfg.outlier_range, cfg.outlier_range, T), y)
    return RegressionData(x, y, outliers)


# ---------------------------------------------------------------------------
# metrics


def metric_j(states, means) -> np.ndarray:
    """Per-component root of the summed squared error (no 1/T factor)."""
    states, means = np.asarray(states, dtype=float), np.asarray(means, dtype=float)
    if states.shape != means.shape:
        raise ValueError(f"shape mismatch: {states.shape} vs {means.shape}")
    return np.sqrt(np.sum((states - means) ** 2, axis=0))


def metric_rmedse(y, yhat) -> float:
    y, yhat = np.atleast_1d(np.asarray(y, dtype=float)), np.atleast_1d(np.asarray(yhat, dtype=float))
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise ValueError("RMedSE of an empty sequence")
    return float(np.sqrt(np.median((y - yhat) ** 2)))


def metric_lt(state, mean) -> float | np.ndarray:
    """Per-step RMSE across components; also accepts ``T x d`` arrays."""
    state, mean = np.asarray(state, dtype=float), np.asarray(mean, dtype=float)
    if state.shape != mean.shape:
        raise ValueError(f"shape mismatch: {state.shape} vs {mean.shape}")
    out = np.sqrt(np.mean((state - mean) ** 2, axis=-1))
    return float(out) if out.ndim == 0 else out


def bootstrap_mean_ci(samples, rng: RngStream, B: int = 500, level: float = 0.95) -> tuple[float, float, float]:
    """Sample mean and percentile bootstrap interval."""
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < 2:
        raise ValueError("bootstrap needs at least two samples")
    if B < 100:
        raise ValueError("use at least 100 bootstrap resamples")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    idx = rng.integers(0, samples.size, (B, samples.size))
    means = samples[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(means, [alpha, 1.0 - alpha])
    return float(samples.mean()), float(low), float(high)


# ---------------------------------------------------------------------------
# CSV datasets


@dataclass(frozen=True)
class TabularData:
    features: np.ndarray
    target: np.ndarray
    feature_min: np.ndarray
    feature_max: np.ndarray


def load_csv_dataset(path, target_col: int = -1, warmup: int = 100) -> TabularData:
    """Read a numeric CSV (header optional) and min-max scale features using the first ``warmup`` rows."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path} is empty")
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    data = np.array(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] < 2:
        raise ValueError("need at least one feature column and a target column")
    target = data[:, target_col]
    features = np.delete(data, target_col % data.shape[1], axis=1)
    head = features[:max(1, min(warmup, len(features)))]
    lo, hi = head.min(axis=0), head.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return TabularData((features - lo) / span, target, lo, hi)


def dump_csv(path, columns: dict[str, np.ndarray]) -> None:
    """Write equal-length named columns to ``path``."""
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    arrays = [a.reshape(len(a), -1) for a in arrays]
    header = []
    for n, a in zip(names, arrays):
        header += [n] if a.shape[1] == 1 else [f"{n}_{j}" for j in range(a.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(arrays[0])):
            writer.writerow([repr(v.item()) for a in arrays for v in a[i]])
