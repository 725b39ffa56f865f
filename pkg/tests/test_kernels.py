import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wavegp.errors import ConfigError, UnsupportedDerivative
from wavegp.kernels import (
    KernelSpec,
    cross_hessian_kernel,
    eval_kernel,
    gram_matrix,
    grad1_kernel,
    grad2_kernel,
    std_function,
)

coords = arrays(np.float64, 3, elements=st.floats(-5, 5))
specs = st.builds(
    KernelSpec,
    family=st.sampled_from(["matern12", "matern32", "squaredexp", "constant"]),
    lengthscale=st.floats(0.1, 5.0),
    variance=st.floats(0.1, 3.0),
    value=st.floats(0.0, 2.0),
)
smooth_specs = st.builds(
    KernelSpec,
    family=st.sampled_from(["matern32", "squaredexp"]),
    lengthscale=st.floats(0.3, 3.0),
    variance=st.floats(0.5, 2.0),
)


def fd_grad1(spec, x, xp, h=1e-6):
    g = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        g[i] = (eval_kernel(spec, x + e, xp) - eval_kernel(spec, x - e, xp)) / (2 * h)
    return g


def fd_cross_hessian(spec, x, xp, h=1e-4):
    H = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            ei, ej = np.zeros(3), np.zeros(3)
            ei[i], ej[j] = h, h
            H[i, j] = (
                eval_kernel(spec, x + ei, xp + ej)
                - eval_kernel(spec, x + ei, xp - ej)
                - eval_kernel(spec, x - ei, xp + ej)
                + eval_kernel(spec, x - ei, xp - ej)
            ) / (4 * h * h)
    return H


# -- evaluation ----------------------------------------------------------------


def test_matern12_values():
    k = KernelSpec("matern12", lengthscale=1.0)
    assert eval_kernel(k, np.zeros(3), np.zeros(3)) == 1.0
    assert eval_kernel(k, np.zeros(3), [1.0, 0, 0]) == pytest.approx(0.3678794, abs=1e-7)


def test_matern32_value():
    k = KernelSpec("matern32", lengthscale=2.0)
    assert eval_kernel(k, np.zeros(3), [2.0, 0, 0]) == pytest.approx(2 * math.exp(-1), abs=1e-15)


def test_squaredexp_and_constant():
    k = KernelSpec("squaredexp", lengthscale=0.5, variance=2.0)
    assert eval_kernel(k, [0, 0, 0], [0, 0.5, 0]) == pytest.approx(2 * math.exp(-0.5), rel=1e-15)
    c = KernelSpec("constant", value=0.7)
    assert eval_kernel(c, [1, 2, 3], [-4, 0, 9]) == 0.7


def test_broadcasting_shapes():
    k = KernelSpec("squaredexp", lengthscale=1.0)
    X = np.random.default_rng(0).normal(size=(4, 1, 3))
    Y = np.random.default_rng(1).normal(size=(1, 5, 3))
    assert eval_kernel(k, X, Y).shape == (4, 5)
    assert grad1_kernel(k, X, Y).shape == (4, 5, 3)
    assert cross_hessian_kernel(k, X, Y).shape == (4, 5, 3, 3)


@settings(max_examples=200, deadline=None)
@given(specs, coords, coords)
def test_symmetry_exact(spec, x, xp):
    assert eval_kernel(spec, x, xp) == eval_kernel(spec, xp, x)


@settings(max_examples=200, deadline=None)
@given(specs, coords, coords)
def test_cauchy_schwarz(spec, x, xp):
    assert abs(eval_kernel(spec, x, xp)) <= std_function(spec, x) * std_function(spec, xp) + 1e-12


# -- derivatives ---------------------------------------------------------------


def test_matern32_gradients_closed_form():
    k = KernelSpec("matern32", lengthscale=1.0)
    x, o = np.array([1.0, 0, 0]), np.zeros(3)
    np.testing.assert_allclose(grad1_kernel(k, x, o), [-math.exp(-1), 0, 0], rtol=1e-14)
    np.testing.assert_allclose(grad2_kernel(k, o, x), [-math.exp(-1), 0, 0], rtol=1e-14)
    np.testing.assert_array_equal(grad1_kernel(k, x, x), np.zeros(3))
    np.testing.assert_array_equal(grad2_kernel(k, x, x), np.zeros(3))


@pytest.mark.parametrize("l", [0.3, 1.0, 2.5])
def test_matern32_cross_hessian_at_coincidence(l):
    k = KernelSpec("matern32", lengthscale=l)
    x = np.array([0.2, -0.1, 0.4])
    np.testing.assert_allclose(cross_hessian_kernel(k, x, x), np.eye(3) / l**2, rtol=1e-14)


def test_constant_derivatives_vanish():
    c = KernelSpec("constant", value=3.0)
    x, y = np.array([1.0, 2, 3]), np.array([0.0, -1, 2])
    np.testing.assert_array_equal(grad1_kernel(c, x, y), np.zeros(3))
    np.testing.assert_array_equal(cross_hessian_kernel(c, x, y), np.zeros((3, 3)))


@pytest.mark.parametrize(
    "spec",
    [KernelSpec("matern12", lengthscale=1.0), KernelSpec("squaredexp", lengthscale=1.0, trunc_center=(0, 0, 0), trunc_radius=1.0)],
)
def test_derivatives_rejected(spec):
    with pytest.raises(UnsupportedDerivative):
        grad1_kernel(spec, np.zeros(3), np.ones(3))
    with pytest.raises(UnsupportedDerivative):
        cross_hessian_kernel(spec, np.zeros(3), np.ones(3))


@settings(max_examples=100, deadline=None)
@given(smooth_specs, coords, coords)
def test_grad2_is_swapped_grad1(spec, x, xp):
    np.testing.assert_array_equal(grad2_kernel(spec, x, xp), grad1_kernel(spec, xp, x))


@settings(max_examples=100, deadline=None)
@given(smooth_specs, coords, coords)
def test_cross_hessian_swap_transpose(spec, x, xp):
    np.testing.assert_allclose(cross_hessian_kernel(spec, x, xp), cross_hessian_kernel(spec, xp, x).T, rtol=0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(smooth_specs, coords, coords)
def test_gradients_match_finite_differences(spec, x, xp):
    d = x - xp
    if np.linalg.norm(d) < 1e-2 * spec.lengthscale:
        return
    g = grad1_kernel(spec, x, xp)
    scale = max(np.abs(g).max(), 1e-3 * spec.variance / spec.lengthscale)
    assert np.abs(g - fd_grad1(spec, x, xp)).max() <= 1e-5 * scale
    H = cross_hessian_kernel(spec, x, xp)
    hscale = max(np.abs(H).max(), 1e-3 * spec.variance / spec.lengthscale**2)
    assert np.abs(H - fd_cross_hessian(spec, x, xp)).max() <= 1e-5 * hscale


# -- projection (transport example) ---------------------------------------------


def test_projected_kernel_is_shift_invariant():
    k = KernelSpec("matern12", lengthscale=1.0, projection=(1.0, -1.0))
    x, xp = np.array([0.3, -0.2]), np.array([1.1, 0.4])
    shift = np.array([0.7, 0.7])
    assert eval_kernel(k, x + shift, xp) == pytest.approx(eval_kernel(k, x, xp), rel=1e-14)
    assert eval_kernel(k, x, xp) == pytest.approx(math.exp(-abs(0.5 - 0.7)), rel=1e-14)


def test_projected_derivatives_fd():
    k = KernelSpec("squaredexp", lengthscale=0.8, projection=(1.0, -1.0))
    x, xp, h = np.array([0.3, -0.2]), np.array([1.1, 0.4]), 1e-5
    g = grad1_kernel(k, x, xp)
    fd = [(eval_kernel(k, x + e, xp) - eval_kernel(k, x - e, xp)) / (2 * h) for e in np.eye(2) * h]
    np.testing.assert_allclose(g, fd, rtol=1e-8)
    # d/dx + d/dy annihilates k(., x')
    assert abs(g.sum()) < 1e-15


# -- truncation ----------------------------------------------------------------


def test_truncated_kernel_vanishes_outside_ball():
    k = KernelSpec("squaredexp", lengthscale=1.0, trunc_center=(0, 0, 0), trunc_radius=1.0)
    assert eval_kernel(k, [0.5, 0, 0], [0, 0.5, 0]) > 0
    assert eval_kernel(k, [1.01, 0, 0], [0, 0, 0]) == 0.0
    assert eval_kernel(k, [0, 0, 0], [0, 0, -1.5]) == 0.0


# -- Gram matrices -------------------------------------------------------------


def test_gram_single_point():
    np.testing.assert_array_equal(gram_matrix(KernelSpec("matern32", lengthscale=1.0), [[0.1, 0.2, 0.3]]), [[1.0]])


def test_gram_matern12_psd():
    P = np.random.default_rng(42).uniform(0, 1, (50, 3))
    K = gram_matrix(KernelSpec("matern12", lengthscale=0.4), P)
    assert np.array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-10


@settings(max_examples=25, deadline=None)
@given(specs, st.integers(2, 100), st.integers(0, 2**32 - 1))
def test_gram_psd_property(spec, n, seed):
    P = np.random.default_rng(seed).uniform(-2, 2, (n, 3))
    K = gram_matrix(spec, P)
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * n * K.diagonal().max()


def test_gram_permutation_equivariant():
    rng = np.random.default_rng(3)
    P = rng.normal(size=(12, 3))
    perm = rng.permutation(12)
    k = KernelSpec("matern32", lengthscale=0.7)
    np.testing.assert_array_equal(gram_matrix(k, P[perm]), gram_matrix(k, P)[np.ix_(perm, perm)])


def test_gram_threads_bitwise():
    P = np.random.default_rng(5).normal(size=(700, 3))
    k = KernelSpec("squaredexp", lengthscale=0.9)
    assert np.array_equal(gram_matrix(k, P, threads=1), gram_matrix(k, P, threads=4))


# -- spec validation and text form --------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(family="matern52"),
        dict(family="matern32", lengthscale=0.0),
        dict(family="matern32", variance=-1.0),
        dict(family="constant", value=-0.5),
        dict(family="matern32", trunc_radius=1.0),
        dict(family="matern32", trunc_center=(0, 0, 0), trunc_radius=-1.0),
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(ConfigError):
        KernelSpec(**kwargs)


@pytest.mark.parametrize(
    "spec",
    [
        KernelSpec("matern32", lengthscale=0.5, variance=2.0),
        KernelSpec("constant", value=0.25),
        KernelSpec("matern12", lengthscale=0.5, trunc_center=(1.0, 0.0, -1.0), trunc_radius=2.0),
        KernelSpec("matern12", lengthscale=1.0, projection=(1.0, -1.0)),
    ],
)
def test_text_round_trip(spec):
    assert KernelSpec.from_text(spec.to_text()) == spec


def test_text_requires_lengthscale():
    with pytest.raises(ConfigError):
        KernelSpec.from_text("family=matern32 variance=1.0")
    with pytest.raises(ConfigError):
        KernelSpec.from_text("family=matern32 lengthscale=1 colour=red")
