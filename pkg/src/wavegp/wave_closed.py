"""Exact sphere averages for squared-exponential (and constant) initial kernels.

For a radial kernel ``f(|d|)`` the projection of a uniform point on a sphere
of radius ``a`` onto any axis is uniform on ``[-a, a]``. Averaging
``f(|x - s g - x' + s' g'|)`` over both spheres therefore reduces to

    h(A, s, s') = E[psi'(W1 + W2 + W3)],   psi(u) = u f(|u|),

with independent ``W1 ~ U[-A, A]``, ``W2 ~ U[-s, s]``, ``W3 ~ U[-s', s']``
and ``A = |x - x'|``. Then ``kv_wave = t t' h`` and
``ku_wave = d_s d_s' (s s' h) = E_W1[ sum over +-,+- of psi'(W1 +- s +- s') ] / 4``.

For the squared exponential ``psi`` and its antiderivatives are elementary,
so every average is a finite difference of closed-form functions. Narrow
uniforms are averaged with Gauss-Legendre instead to avoid cancellation.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ConfigError
from .sphere import gauss_legendre

_NARROW = 0.05  # widths below this many lengthscales are integrated numerically
_GL_N = 8


def _check(spec):
    if spec.truncated or spec.projection is not None or spec.family not in ("squaredexp", "constant"):
        raise ConfigError("closed-form wave kernels need untruncated squaredexp or constant kernels")


class _SE:
    def __init__(self, spec):
        self.v = spec.variance
        self.l = spec.lengthscale

    def dpsi(self, u):
        r2 = (u / self.l) ** 2
        return self.v * (1.0 - r2) * np.exp(-0.5 * r2)

    def psi(self, u):
        return self.v * u * np.exp(-0.5 * (u / self.l) ** 2)

    def P1(self, u):
        return -self.v * self.l**2 * np.exp(-0.5 * (u / self.l) ** 2)

    def P2(self, u):
        return -self.v * self.l**3 * np.sqrt(np.pi / 2) * erf(u / (np.sqrt(2) * self.l))


def _gl_offsets(width):
    """Gauss-Legendre offsets (..., n) and weights (n,) for the uniform average on [-width, width]."""
    x, w = gauss_legendre(_GL_N)
    return width[..., None] * x, 0.5 * w


def _triple_average(F: _SE, a1, a2, a3):
    """E[psi'(W1 + W2 + W3)] with widths a1 >= a2 >= a3 >= 0 (arrays)."""
    thr = _NARROW * F.l
    out = np.empty(a1.shape)
    eps = (-1.0, 1.0)

    m3 = a3 >= thr
    if np.any(m3):
        b1, b2, b3 = a1[m3], a2[m3], a3[m3]
        acc = np.zeros(b1.shape)
        for e1 in eps:
            for e2 in eps:
                for e3 in eps:
                    acc += e1 * e2 * e3 * F.P2(e1 * b1 + e2 * b2 + e3 * b3)
        out[m3] = acc / (8.0 * b1 * b2 * b3)

    m2 = (a2 >= thr) & ~m3
    if np.any(m2):
        b1, b2 = a1[m2][:, None], a2[m2][:, None]
        off, w = _gl_offsets(a3[m2])
        acc = np.zeros(off.shape)
        for e1 in eps:
            for e2 in eps:
                acc += e1 * e2 * F.P1(off + e1 * b1 + e2 * b2)
        out[m2] = (acc / (4.0 * b1 * b2)) @ w

    m1 = (a1 >= thr) & (a2 < thr)
    if np.any(m1):
        b1 = a1[m1][:, None, None]
        o2, w = _gl_offsets(a2[m1])
        o3, _ = _gl_offsets(a3[m1])
        v = o2[:, :, None] + o3[:, None, :]
        vals = (F.psi(v + b1) - F.psi(v - b1)) / (2.0 * b1)
        out[m1] = np.einsum("pij,i,j->p", vals, w, w)

    m0 = a1 < thr
    if np.any(m0):
        o1, w = _gl_offsets(a1[m0])
        o2, _ = _gl_offsets(a2[m0])
        o3, _ = _gl_offsets(a3[m0])
        v = o1[:, :, None, None] + o2[:, None, :, None] + o3[:, None, None, :]
        out[m0] = np.einsum("pijk,i,j,k->p", F.dpsi(v), w, w, w)
    return out


def _ku_average(F: _SE, A, s, sp):
    """E_W1[ sum_{+-,+-} psi'(W1 +- s +- s') ] / 4 with W1 ~ U[-A, A]."""
    thr = _NARROW * F.l
    shifts = [e2 * s + e3 * sp for e2 in (-1.0, 1.0) for e3 in (-1.0, 1.0)]
    out = np.empty(A.shape)
    wide = A >= thr
    if np.any(wide):
        Aw = A[wide]
        acc = np.zeros(Aw.shape)
        for c in shifts:
            cw = c[wide]
            acc += (F.psi(cw + Aw) - F.psi(cw - Aw)) / (2.0 * Aw)
        out[wide] = 0.25 * acc
    if np.any(~wide):
        off, w = _gl_offsets(A[~wide])
        acc = np.zeros(off.shape)
        for c in shifts:
            acc += F.dpsi(off + c[~wide][:, None])
        out[~wide] = 0.25 * (acc @ w)
    return out


def double_sphere_mean(spec, A, s, sp):
    """Average of k(x - s g, x' - s' g') over two unit spheres, |x - x'| = A."""
    _check(spec)
    A, s, sp = np.broadcast_arrays(*(np.asarray(v, float) for v in (A, s, sp)))
    if spec.family == "constant":
        return np.full(A.shape, spec.variance * spec.value)
    widths = np.sort(np.stack([A, s, sp]), axis=0)
    return _triple_average(_SE(spec), widths[2].ravel(), widths[1].ravel(), widths[0].ravel()).reshape(A.shape)


def position_average(spec, A, s, sp):
    """Exact value of the initial-position wave kernel for given A, s, s'."""
    _check(spec)
    A, s, sp = np.broadcast_arrays(*(np.asarray(v, float) for v in (A, s, sp)))
    if spec.family == "constant":
        return np.full(A.shape, spec.variance * spec.value)
    return _ku_average(_SE(spec), A.ravel(), s.ravel(), sp.ravel()).reshape(A.shape)


def pair_values(model, z: np.ndarray, zp: np.ndarray, part: str) -> np.ndarray:
    A = np.linalg.norm(z[:, :3] - zp[:, :3], axis=-1)
    s = model.c * np.abs(z[:, 3])
    sp = model.c * np.abs(zp[:, 3])
    out = np.zeros(z.shape[0])
    if part in ("kv", "kw"):
        out += z[:, 3] * zp[:, 3] * double_sphere_mean(model.kv, A, s, sp)
    if part in ("ku", "kw"):
        out += position_average(model.ku, A, s, sp)
    return out
