import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wolf.core_math import (
    GaussianBelief,
    NotSpdError,
    RngStream,
    SpdMatrix,
    cholesky,
    gaussian_kl,
    gaussian_logpdf,
    logdet_spd,
    mahalanobis_sq,
    sample_mvn,
    spd_inverse,
)

from conftest import random_belief, random_spd


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotSpdError):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_cholesky_rejects_singular_and_nonfinite():
    with pytest.raises(NotSpdError):
        cholesky(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(NotSpdError):
        cholesky(np.array([[np.nan]]))
    with pytest.raises(NotSpdError):
        cholesky(np.ones((2, 3)))


def test_inverse_and_logdet(nprng):
    a = random_spd(nprng, 5)
    np.testing.assert_allclose(spd_inverse(a) @ a, np.eye(5), atol=1e-10)
    assert logdet_spd(a) == pytest.approx(np.linalg.slogdet(a)[1], rel=1e-12)
    s = SpdMatrix(a)
    np.testing.assert_allclose(s.solve(np.ones(5)), np.linalg.solve(a, np.ones(5)), rtol=1e-10)
    assert s.logdet() == pytest.approx(logdet_spd(a))


def test_belief_validation():
    with pytest.raises(ValueError):
        GaussianBelief(np.zeros(2), np.eye(3))
    with pytest.raises(ValueError):
        GaussianBelief(np.array([np.inf, 0.0]), np.eye(2))
    b = GaussianBelief([1.0, 2.0], [[2.0, 0.5], [0.5000001, 1.0]])
    np.testing.assert_array_equal(b.cov, b.cov.T)


def test_mahalanobis_identity():
    assert mahalanobis_sq(np.array([3.0, 4.0]), np.eye(2)) == pytest.approx(25.0)
    assert mahalanobis_sq(np.array([2.0]), np.array([[4.0]])) == pytest.approx(1.0)


def test_kl_known_values():
    p = GaussianBelief([0.0], [[1.0]])
    assert gaussian_kl(p, p) == 0.0
    q = GaussianBelief([1.0], [[1.0]])
    assert gaussian_kl(p, q) == pytest.approx(0.5)
    # 1d variance change: 0.5 (s - 1 - ln s)
    r = GaussianBelief([0.0], [[2.0]])
    assert gaussian_kl(r, p) == pytest.approx(0.5 * (2.0 - 1.0 - np.log(2.0)))


def test_kl_against_monte_carlo():
    rng = np.random.default_rng(3)
    p, q = random_belief(rng, 3), random_belief(rng, 3)
    stream = RngStream(11)
    x = sample_mvn(p, stream, 200_000)
    terms = gaussian_logpdf(x, p) - gaussian_logpdf(x, q)
    est, se = terms.mean(), terms.std(ddof=1) / np.sqrt(x.shape[0])
    assert abs(est - gaussian_kl(p, q)) < 3 * se


def test_logpdf_matches_scipy(nprng):
    from scipy.stats import multivariate_normal

    b = random_belief(nprng, 3)
    x = nprng.standard_normal((4, 3))
    np.testing.assert_allclose(gaussian_logpdf(x, b), multivariate_normal(b.mean, b.cov).logpdf(x), rtol=1e-10)


def test_rng_streams_reproducible_and_distinct():
    a, b = RngStream(5, 1), RngStream(5, 1)
    np.testing.assert_array_equal(a.normal(4), b.normal(4))
    assert not np.array_equal(RngStream(5, 1).normal(4), RngStream(5, 2).normal(4))
    assert not np.array_equal(RngStream(5, 1).split(0).normal(4), RngStream(5, 1).split(1).normal(4))


def test_sample_mvn_moments():
    b = GaussianBelief([1.0, -2.0], [[2.0, 0.6], [0.6, 1.0]])
    x = sample_mvn(b, RngStream(0), 100_000)
    np.testing.assert_allclose(x.mean(axis=0), b.mean, atol=0.03)
    np.testing.assert_allclose(np.cov(x, rowvar=False), b.cov, atol=0.05)
    assert sample_mvn(b, RngStream(0)).shape == (2,)


@given(st.integers(1, 5), st.integers(0, 10_000))
def test_kl_nonnegative_and_zero_on_self(m, seed):
    rng = np.random.default_rng(seed)
    p, q = random_belief(rng, m), random_belief(rng, m)
    assert gaussian_kl(p, q) >= 0.0
    assert gaussian_kl(p, p) == pytest.approx(0.0, abs=1e-9)


@given(st.integers(1, 6), st.integers(0, 10_000))
def test_spd_inverse_symmetric(m, seed):
    a = random_spd(np.random.default_rng(seed), m)
    inv = SpdMatrix(a).inverse()
    np.testing.assert_array_equal(inv, inv.T)
    np.testing.assert_allclose(inv @ a, np.eye(m), atol=1e-7)
