import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wolf.baselines import AdamState, KfBConfig, KfIwConfig, adam_ogd_step, digamma, kfb_update, kfiw_update
from wolf.core_math import GaussianBelief
from wolf.gaussian_filters import LinearObservation, NonlinearModel, kf_update

from conftest import random_belief, random_spd

# 30-digit reference values
DIGAMMA_TABLE = [
    (0.5, -1.9635100260214234794),
    (0.75, -1.0858608797864721696),
    (1, -0.57721566490153286061),
    (1.5, 0.036489973978576520559),
    (2, 0.42278433509846713939),
    (3.3, 1.0348224890596216863),
    (5.9, 1.6878194259079581818),
    (6, 1.7061176684318004727),
    (7.25, 1.9104535268837360284),
    (10, 2.2517525890667211076),
    (20.5, 2.9958363947076465821),
    (50, 3.901989673427892197),
    (99.9, 4.5991563307081330216),
    (100, 4.6001618527380874002),
]


@pytest.mark.parametrize("x, expected", DIGAMMA_TABLE)
def test_digamma_table(x, expected):
    assert abs(digamma(x) - expected) < 1e-10


def test_digamma_against_scipy_grid():
    from scipy.special import psi

    xs = np.linspace(0.5, 100, 400)
    assert max(abs(digamma(x) - psi(x)) for x in xs) < 1e-10


def test_digamma_domain():
    with pytest.raises(ValueError):
        digamma(0.0)


def scalar_obs():
    return LinearObservation([[1.0]], [[1.0]])


def test_kfiw_hand_case():
    post = kfiw_update(GaussianBelief([0.0], [[1.0]]), scalar_obs(), [0.0], KfIwConfig(ell=1.0, inner_iters=1))
    assert post.mean[0] == pytest.approx(0.0)
    assert post.cov[0, 0] == pytest.approx(0.5)


def test_kfiw_large_ell_is_kf():
    rng = np.random.default_rng(0)
    prior = random_belief(rng, 3)
    obs = LinearObservation(rng.standard_normal((2, 3)), random_spd(rng, 2, 1.0))
    y = rng.standard_normal(2)
    a = kfiw_update(prior, obs, y, KfIwConfig(ell=1e6, inner_iters=1))
    b = kf_update(prior, obs, y).posterior
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-4, atol=1e-8)
    np.testing.assert_allclose(a.cov, b.cov, rtol=1e-4, atol=1e-8)


def test_kfiw_zero_innovation_keeps_mean():
    prior = GaussianBelief([1.0, -2.0], [[2.0, 0.3], [0.3, 1.0]])
    obs = LinearObservation([[1.0, 0.5]], [[0.7]])
    for iters in (1, 2, 5):
        post = kfiw_update(prior, obs, obs.H @ prior.mean, KfIwConfig(ell=2.0, inner_iters=iters))
        np.testing.assert_allclose(post.mean, prior.mean)


def test_kfiw_validation():
    with pytest.raises(ValueError):
        KfIwConfig(ell=0.0)
    with pytest.raises(ValueError):
        KfIwConfig(inner_iters=0)


def test_kfb_first_pass_is_kf():
    rng = np.random.default_rng(1)
    prior = random_belief(rng, 3)
    obs = LinearObservation(rng.standard_normal((2, 3)), random_spd(rng, 2, 1.0))
    y = rng.standard_normal(2)
    a = kfb_update(prior, obs, y, KfBConfig(inner_iters=1))
    b = kf_update(prior, obs, y).posterior
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-12)


def test_kfb_rejects_enormous_residual():
    prior = GaussianBelief([0.0], [[1.0]])
    trace = []
    post = kfb_update(prior, scalar_obs(), [1e3], KfBConfig(inner_iters=2), trace)
    assert trace[0] < 1e-6
    assert post.mean[0] == prior.mean[0] and post.cov[0, 0] == prior.cov[0, 0]


def test_kfb_nonlinear_matches_linear():
    prior = GaussianBelief([0.5, 1.0], np.eye(2))
    H = np.array([[1.0, 2.0]])
    obs = LinearObservation(H, [[2.0]])
    model = NonlinearModel(lambda x: x, lambda x: H @ x, np.eye(2), [[2.0]], h_jac=lambda x: H)
    cfg = KfBConfig(alpha0=2.0, beta0=3.0, inner_iters=3)
    a, b = kfb_update(prior, obs, [3.0], cfg), kfb_update(prior, model, [3.0], cfg)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)


def test_kfb_validation():
    with pytest.raises(ValueError):
        KfBConfig(alpha0=0.0)
    with pytest.raises(ValueError):
        KfBConfig(tol=1.0)


@given(st.floats(-1e4, 1e4), st.floats(0.1, 10), st.floats(0.1, 10), st.integers(1, 4))
def test_kfb_rho_in_unit_interval(y, a0, b0, iters):
    trace = []
    post = kfb_update(GaussianBelief([0.0], [[1.0]]), scalar_obs(), [y], KfBConfig(a0, b0, iters), trace)
    assert all(0.0 <= r <= 1.0 for r in trace)
    assert post.cov[0, 0] <= 1.0 + 1e-12


@given(st.integers(0, 10_000), st.floats(0.1, 100), st.integers(1, 4))
def test_kfiw_covariance_spd(seed, ell, iters):
    rng = np.random.default_rng(seed)
    prior = random_belief(rng, 3)
    obs = LinearObservation(rng.standard_normal((2, 3)), random_spd(rng, 2, 0.5))
    post = kfiw_update(prior, obs, 10 * rng.standard_normal(2), KfIwConfig(ell, iters))
    assert np.linalg.eigvalsh(post.cov).min() > 0


def test_adam_zero_gradient():
    state = AdamState.zeros(3, inner_iters=4)
    p, s = adam_ogd_step(np.ones(3), lambda th: np.zeros(3), state)
    np.testing.assert_array_equal(p, np.ones(3))
    assert s.step == 4


def test_adam_first_step_moves_lr():
    p, _ = adam_ogd_step(np.zeros(2), lambda th: np.array([3.0, -0.5]), AdamState.zeros(2, lr=0.1))
    np.testing.assert_allclose(p, [-0.1, 0.1], rtol=1e-6)


def test_adam_two_step_hand_case():
    state = AdamState.zeros(1, lr=0.1)
    p, state = adam_ogd_step(np.zeros(1), lambda th: np.array([1.0]), state)
    p, state = adam_ogd_step(p, lambda th: np.array([-1.0]), state)
    # m_hat = -0.01 / 0.19, v_hat = 1
    assert p[0] == pytest.approx(-0.1 + 0.1 * 0.01 / 0.19, rel=1e-6)


def test_adam_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        adam_ogd_step(np.zeros(1), lambda th: np.array([math.nan]), AdamState.zeros(1))
