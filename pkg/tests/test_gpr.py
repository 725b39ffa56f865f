import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavegp.errors import ConfigError, SingularGram
from wavegp.gpr import (
    ObservationSet,
    fit_posterior,
    posterior_cov,
    posterior_mean,
    posterior_std,
    posterior_var,
    read_observations,
    sample_posterior,
    sample_prior,
)
from wavegp.kernels import KernelSpec, cross_matrix, eval_kernel
from wavegp.wave import WaveModel, kw_matrix

SE = KernelSpec("squaredexp", lengthscale=0.7)
M32 = KernelSpec("matern32", lengthscale=0.5, variance=1.5)


def data(n, seed, dim=3):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, dim))
    return X, np.sin(X.sum(axis=1)) + 0.1 * rng.normal(size=n)


def test_single_observation():
    x1, u1 = np.array([[0.1, 0.2, 0.3]]), np.array([1.7])
    post = fit_posterior(SE, ObservationSet(x1, u1))
    assert post.alpha[0] == pytest.approx(1.7, rel=1e-15)
    z = np.array([[0.5, -0.2, 0.0]])
    expected = eval_kernel(SE, z[0], x1[0]) * 1.7 / eval_kernel(SE, x1[0], x1[0])
    assert posterior_mean(post, z)[0] == pytest.approx(expected, rel=1e-14)


def test_duplicate_points_singular():
    X = np.array([[0.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0]])
    with pytest.raises(SingularGram) as err:
        fit_posterior(SE, ObservationSet(X, [1.0, 1.0, 0.0]))
    assert err.value.smallest_pivot <= 1e-12


def test_duplicate_points_with_escalation():
    X = np.array([[0.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0]])
    post = fit_posterior(SE, ObservationSet(X, [1.0, 1.0, 0.0]), escalate=True)
    assert 0 < post.jitter <= 1e-6


@pytest.mark.parametrize("kernel", [SE, M32])
def test_factor_residual(kernel):
    X, y = data(30, 1)
    obs = ObservationSet(X, y, jitter=1e-8)
    post = fit_posterior(kernel, obs)
    K = cross_matrix(kernel, X, X)
    L = post.chol
    assert np.allclose(L, np.tril(L)) and np.all(np.diag(L) > 0)
    assert np.abs(L @ L.T - (K + 1e-8 * np.eye(30))).max() <= 1e-10 * np.abs(K).max()


@pytest.mark.parametrize("kernel", [SE, M32])
def test_interpolation_and_zero_variance(kernel):
    X, y = data(15, 2)
    post = fit_posterior(kernel, ObservationSet(X, y))
    assert np.abs(posterior_mean(post, X) - y).max() <= 1e-9
    assert np.abs(np.diag(posterior_cov(post, X, X))).max() <= 1e-9
    assert posterior_std(post, X).max() <= 1e-4


def test_far_field_decay():
    X, y = data(10, 3)
    post = fit_posterior(SE, ObservationSet(X, y))
    z = np.array([[20.0, 0, 0]])  # > 10 lengthscales from every point
    assert abs(posterior_mean(post, z)[0]) <= 1e-6 * np.abs(y).max()


def test_no_information_limit():
    X, y = data(5, 4)
    post = fit_posterior(SE, ObservationSet(X, y))
    Z = np.array([[50.0, 0, 0], [50.5, 0.2, 0]])
    np.testing.assert_allclose(posterior_cov(post, Z, Z), cross_matrix(SE, Z, Z), atol=1e-300)


def test_var_matches_cov_diagonal():
    X, y = data(12, 5)
    post = fit_posterior(M32, ObservationSet(X, y))
    Z = np.random.default_rng(0).uniform(-1, 1, (20, 3))
    np.testing.assert_allclose(posterior_var(post, Z), np.diag(posterior_cov(post, Z, Z)), atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_variance_reduction_and_nesting(n, seed):
    X, y = data(n + 1, seed)
    Z = np.random.default_rng(seed + 1).uniform(-1.5, 1.5, (25, 3))
    small = fit_posterior(M32, ObservationSet(X[:n], y[:n]), escalate=True)
    big = fit_posterior(M32, ObservationSet(X, y), escalate=True)
    prior = np.diag(cross_matrix(M32, Z, Z))
    v_small, v_big = posterior_var(small, Z), posterior_var(big, Z)
    assert np.all(v_small <= prior + 1e-10)
    assert np.all(v_big <= v_small + 1e-10)


def test_heredity_structure_wave():
    se = KernelSpec("squaredexp", lengthscale=1.0)
    model = WaveModel(1.0, se, se, method="closed_form")
    X, y = data(8, 6, dim=4)
    post = fit_posterior(model, ObservationSet(X, y))
    Z = np.random.default_rng(7).uniform(-1, 1, (10, 4))
    combo = kw_matrix(model, Z, X) @ post.alpha
    np.testing.assert_allclose(posterior_mean(post, Z), combo, rtol=0, atol=1e-12)
    z0 = X[:1] + 0.1
    cov_z0 = posterior_cov(post, Z, z0)[:, 0]
    beta = np.linalg.solve(kw_matrix(model, X), kw_matrix(model, X, z0)[:, 0])
    np.testing.assert_allclose(cov_z0, kw_matrix(model, Z, z0)[:, 0] - kw_matrix(model, Z, X) @ beta, atol=1e-10)


# -- sampling ------------------------------------------------------------------


def test_sample_prior_constant_zero():
    zero = KernelSpec("constant", value=0.0)
    P = np.random.default_rng(0).normal(size=(7, 3))
    np.testing.assert_array_equal(sample_prior(zero, P, 3), np.zeros(7))


def test_sample_prior_deterministic():
    P = np.random.default_rng(1).normal(size=(9, 3))
    assert np.array_equal(sample_prior(SE, P, 12345), sample_prior(SE, P, 12345))
    assert not np.array_equal(sample_prior(SE, P, 12345), sample_prior(SE, P, 12346))


def test_sample_prior_variance():
    P = np.array([[0.0, 0, 0], [0.3, 0.1, 0.0]])
    vals = np.array([sample_prior(M32, P, s)[0] for s in range(1000)])
    var = np.mean(vals**2)
    se = np.sqrt(2.0 / 1000) * 1.5
    assert abs(var - 1.5) <= 3 * se


def test_sample_posterior_hits_data():
    X, y = data(6, 8)
    post = fit_posterior(SE, ObservationSet(X, y))
    s = sample_posterior(post, X, 4)
    assert np.abs(s - y).max() <= 1e-4


# -- input handling --------------------------------------------------------------


def test_observation_validation():
    with pytest.raises(ConfigError):
        ObservationSet(np.zeros((2, 3)), [1.0])
    with pytest.raises(ConfigError):
        ObservationSet(np.zeros((0, 3)), [])
    with pytest.raises(ConfigError):
        ObservationSet(np.zeros((1, 3)), [1.0], jitter=-1.0)


def test_read_observations(tmp_path):
    p = tmp_path / "obs.csv"
    p.write_text("# comment\nx,y,z,t,value\n0,0,0,0.5,1.25\n1,0,0,0.0,-2\n")
    obs = read_observations(p, jitter=1e-9)
    np.testing.assert_array_equal(obs.X, [[0, 0, 0, 0.5], [1, 0, 0, 0]])
    np.testing.assert_array_equal(obs.y, [1.25, -2])
    assert obs.jitter == 1e-9
    p.write_text("a,b,value\n1,2,3\n")
    with pytest.raises(ConfigError):
        read_observations(p)
    p.write_text("x,y,z,value\n1,2,oops,3\n")
    with pytest.raises(ConfigError):
        read_observations(p)
