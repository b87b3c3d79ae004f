"""Gaussian and SPD linear-algebra primitives shared by every filter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

# min diag of the Cholesky factor relative to its max diag
SPD_RTOL = 1e-12


class NotSpdError(np.linalg.LinAlgError):
    """Raised when a matrix that must be symmetric positive definite is not."""


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``a``; raises :class:`NotSpdError` instead of regularising."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise NotSpdError(f"matrix is not square: {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotSpdError("matrix has non-finite entries")
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotSpdError(str(exc)) from None
    diag = np.diag(low)
    if diag.min() < SPD_RTOL * diag.max():
        raise NotSpdError("matrix is numerically singular")
    return low


def spd_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of an SPD matrix through its Cholesky factor."""
    low = cholesky(a)
    inv_low = scipy.linalg.solve_triangular(low, np.eye(low.shape[0]), lower=True)
    return inv_low.T @ inv_low


def logdet_spd(a: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cholesky(a)))))


@dataclass(frozen=True)
class SpdMatrix:
    """Dense SPD matrix with its Cholesky factor cached at construction."""

    matrix: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mat = symmetrize(np.atleast_2d(np.asarray(self.matrix, dtype=float)))
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "chol", cholesky(mat))

    @classmethod
    def of(cls, a) -> "SpdMatrix":
        return a if isinstance(a, SpdMatrix) else cls(a)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve((self.chol, True), b)

    def inverse(self) -> np.ndarray:
        """Cached inverse; treat the returned array as read-only."""
        inv = self.__dict__.get("_inverse")
        if inv is None:
            inv = symmetrize(self.solve(np.eye(self.dim)))
            inv.setflags(write=False)
            object.__setattr__(self, "_inverse", inv)
        return inv

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


@dataclass(frozen=True)
class GaussianBelief:
    """Mean vector and SPD covariance of a Gaussian over the latent state."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean has non-finite entries")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", symmetrize(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    def validate(self) -> "GaussianBelief":
        cholesky(self.cov)
        return self


class RngStream:
    """Seeded normal/uniform generator; ``(seed, stream)`` pins the draw sequence.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys, so
    distinct stream ids give statistically independent generators.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self.gen = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def split(self, stream: int) -> "RngStream":
        """Child stream keyed by ``(seed, self.stream, stream)``."""
        child = RngStream.__new__(RngStream)
        child.seed = self.seed
        child.stream = int(stream)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream, int(stream)))
        child.gen = np.random.Generator(np.random.PCG64(seq))
        return child

    def normal(self, size=None) -> np.ndarray:
        return self.gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def gamma(self, shape, scale=1.0, size=None):
        return self.gen.gamma(shape, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)


def mahalanobis_sq(e: np.ndarray, R) -> float:
    """Squared Mahalanobis norm ``e' R^{-1} e`` via a triangular solve."""
    R = SpdMatrix.of(R)
    e = np.atleast_1d(np.asarray(e, dtype=float))
    if e.shape != (R.dim,):
        raise ValueError(f"residual length {e.shape} does not match R of size {R.dim}")
    z = scipy.linalg.solve_triangular(R.chol, e, lower=True)
    return float(z @ z)


def gaussian_kl(p: GaussianBelief, q: GaussianBelief) -> float:
    """KL(p || q) between two Gaussians in closed form."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    low_q = cholesky(q.cov)
    low_p = cholesky(p.cov)
    # Tr(Sq^-1 Sp) = ||Lq^-1 Lp||_F^2
    a = scipy.linalg.solve_triangular(low_q, low_p, lower=True)
    z = scipy.linalg.solve_triangular(low_q, q.mean - p.mean, lower=True)
    logdet_ratio = 2.0 * (np.sum(np.log(np.diag(low_q))) - np.sum(np.log(np.diag(low_p))))
    kl = 0.5 * (np.sum(a * a) - p.dim + z @ z + logdet_ratio)
    return max(float(kl), 0.0)


def gaussian_logpdf(x: np.ndarray, belief: GaussianBelief) -> np.ndarray:
    """Log density at each row of ``x``."""
    x = np.atleast_2d(x)
    low = cholesky(belief.cov)
    z = scipy.linalg.solve_triangular(low, (x - belief.mean).T, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(low)))
    return -0.5 * (np.sum(z * z, axis=0) + logdet + belief.dim * np.log(2 * np.pi))


def sample_mvn(belief: GaussianBelief, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Draw ``mean + L z``; with ``size`` returns a ``size x m`` array (row-major draws)."""
    low = cholesky(belief.cov)
    if size is None:
        return belief.mean + low @ rng.normal(belief.dim)
    z = rng.normal((size, belief.dim))
    return belief.mean + z @ low.T
