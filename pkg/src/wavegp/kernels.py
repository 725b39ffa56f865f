"""Spatial covariance kernels with analytic first and mixed second derivatives.

Kernels are described by an immutable :class:`KernelSpec`. All evaluation
functions broadcast over leading axes: ``x`` and ``xp`` are arrays of shape
``(..., D)`` and results have shape ``(...)`` (or ``(..., D)`` /
``(..., D, D)`` for derivatives).

The Matern forms are used without the usual sqrt(2 nu) rescaling of the
distance::

    matern12:   exp(-r/l)
    matern32:   (1 + r/l) exp(-r/l)
    squaredexp: exp(-r^2 / (2 l^2))

all multiplied by ``variance``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._parallel import chunk_slices, map_chunks
from .errors import ConfigError, UnsupportedDerivative

FAMILIES = ("matern12", "matern32", "squaredexp", "constant")
_DIFFERENTIABLE = ("matern32", "squaredexp", "constant")

# radial derivative formulas switch to their analytic limit below this r/l
_R0 = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """Declarative covariance function.

    ``family`` is one of ``matern12``, ``matern32``, ``squaredexp`` or
    ``constant`` (``k = variance * value``). ``trunc_center``/``trunc_radius``
    multiply the kernel by the indicator of the closed ball in both
    arguments. ``projection`` turns the kernel into ``k0(p.x, p.x')`` for a
    fixed vector ``p``; ``projection=(1, -1)`` gives the shift-invariant
    kernel ``k0(x - y, x' - y')`` of the 2D transport equation.
    """

    family: str
    lengthscale: float = 1.0
    variance: float = 1.0
    value: float = 1.0
    trunc_center: Optional[tuple] = None
    trunc_radius: Optional[float] = None
    projection: Optional[tuple] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise ConfigError("lengthscale must be positive")
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ConfigError("variance must be positive")
        if self.family == "constant" and not self.value >= 0:
            raise ConfigError("constant kernel value must be >= 0")
        if (self.trunc_center is None) != (self.trunc_radius is None):
            raise ConfigError("truncation needs both trunc_center and trunc_radius")
        if self.trunc_radius is not None:
            if not self.trunc_radius > 0:
                raise ConfigError("truncation radius must be positive")
            object.__setattr__(self, "trunc_center", tuple(float(v) for v in self.trunc_center))
        if self.projection is not None:
            object.__setattr__(self, "projection", tuple(float(v) for v in self.projection))

    @property
    def truncated(self) -> bool:
        return self.trunc_radius is not None

    @property
    def differentiable(self) -> bool:
        return self.family in _DIFFERENTIABLE and not self.truncated

    # flat key-value text form -------------------------------------------

    def to_text(self) -> str:
        parts = [f"family={self.family}", f"lengthscale={self.lengthscale!r}", f"variance={self.variance!r}"]
        if self.family == "constant":
            parts.append(f"value={self.value!r}")
        if self.truncated:
            parts.append("trunc_center=" + ",".join(repr(v) for v in self.trunc_center))
            parts.append(f"trunc_radius={self.trunc_radius!r}")
        if self.projection is not None:
            parts.append("projection=" + ",".join(repr(v) for v in self.projection))
        return " ".join(parts)

    @classmethod
    def from_text(cls, text: str) -> "KernelSpec":
        items = {}
        for tok in text.split():
            if "=" not in tok:
                raise ConfigError(f"malformed kernel token {tok!r}")
            key, val = tok.split("=", 1)
            items[key] = val
        return cls.from_mapping(items)

    @classmethod
    def from_mapping(cls, items: dict) -> "KernelSpec":
        known = {"family", "lengthscale", "variance", "value", "trunc_center", "trunc_radius", "projection"}
        unknown = set(items) - known
        if unknown:
            raise ConfigError(f"unknown kernel keys {sorted(unknown)}")
        if "family" not in items:
            raise ConfigError("kernel family missing")
        family = str(items["family"]).lower()
        if family != "constant" and "lengthscale" not in items:
            raise ConfigError("kernel lengthscale missing")
        try:
            kw = dict(family=family, lengthscale=float(items.get("lengthscale", 1.0)),
                      variance=float(items.get("variance", 1.0)), value=float(items.get("value", 1.0)))
            if "trunc_center" in items:
                kw["trunc_center"] = _floats(items["trunc_center"])
            if "trunc_radius" in items:
                kw["trunc_radius"] = float(items["trunc_radius"])
            if "projection" in items:
                kw["projection"] = _floats(items["projection"])
        except ValueError as exc:
            raise ConfigError(f"bad kernel value: {exc}") from None
        return cls(**kw)


def _floats(val) -> tuple:
    if isinstance(val, str):
        return tuple(float(v) for v in val.split(","))
    return tuple(float(v) for v in val)


# --------------------------------------------------------------------------
# radial profile f(r) and derivative coefficients
# --------------------------------------------------------------------------


def _profile(spec: KernelSpec, r):
    l = spec.lengthscale
    if spec.family == "matern12":
        f = np.exp(-r / l)
    elif spec.family == "matern32":
        f = (1.0 + r / l) * np.exp(-r / l)
    elif spec.family == "squaredexp":
        f = np.exp(-0.5 * (r / l) ** 2)
    else:
        f = np.full(np.shape(r), spec.value)
    return spec.variance * f


def _deriv_coeffs(spec: KernelSpec, r):
    """Return ``(a, b)`` with grad_1 k = a d and
    d_{x_i} d_{x'_j} k = -(a delta_ij + b d_i d_j), d = x - x'."""
    l, v = spec.lengthscale, spec.variance
    if spec.family == "squaredexp":
        f = v * np.exp(-0.5 * (r / l) ** 2)
        return -f / l**2, f / l**4
    if spec.family == "matern32":
        e = v * np.exp(-r / l)
        small = r < _R0 * l
        # b d d^T = e d d^T / (l^3 r) -> 0 as r -> 0
        b = np.where(small, 0.0, e / (l**3 * np.where(small, 1.0, r)))
        return -e / l**2, b
    if spec.family == "constant":
        z = np.zeros(np.shape(r))
        return z, z
    raise UnsupportedDerivative(f"{spec.family} kernel is not differentiable at r=0")


def _check_diff(spec: KernelSpec):
    if spec.truncated:
        raise UnsupportedDerivative("truncated kernels have no classical derivatives")
    if spec.family not in _DIFFERENTIABLE:
        raise UnsupportedDerivative(f"{spec.family} kernel is not differentiable at r=0")


def _distance(spec: KernelSpec, x, xp):
    d = np.asarray(x, dtype=float) - np.asarray(xp, dtype=float)
    if spec.projection is not None:
        p = np.asarray(spec.projection)
        if p.shape[0] != d.shape[-1]:
            raise ValueError(f"projection of length {p.shape[0]} applied to {d.shape[-1]}-d points")
        delta = d @ p
        return d, delta, np.abs(delta)
    return d, None, np.sqrt(np.sum(d * d, axis=-1))


def _truncation_mask(spec: KernelSpec, x, xp):
    c = np.asarray(spec.trunc_center)
    R = spec.trunc_radius
    inside = np.linalg.norm(np.asarray(x, float) - c, axis=-1) <= R
    inside_p = np.linalg.norm(np.asarray(xp, float) - c, axis=-1) <= R
    return inside & inside_p


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------


def eval_kernel(spec: KernelSpec, x, xp):
    """k(x, x'), broadcasting over leading axes."""
    _, _, r = _distance(spec, x, xp)
    k = _profile(spec, r)
    if spec.truncated:
        k = np.where(_truncation_mask(spec, x, xp), k, 0.0)
    return k[()] if np.ndim(k) == 0 else k


def grad1_kernel(spec: KernelSpec, x, xp):
    """Gradient of k with respect to its first argument."""
    _check_diff(spec)
    d, delta, r = _distance(spec, x, xp)
    a, _ = _deriv_coeffs(spec, r)
    if delta is not None:
        return (a * delta)[..., None] * np.asarray(spec.projection)
    return a[..., None] * d


def grad2_kernel(spec: KernelSpec, x, xp):
    """Gradient of k with respect to its second argument."""
    return -grad1_kernel(spec, x, xp)


def cross_hessian_kernel(spec: KernelSpec, x, xp):
    """Matrix with entries d_{x_i} d_{x'_j} k(x, x')."""
    _check_diff(spec)
    d, delta, r = _distance(spec, x, xp)
    a, b = _deriv_coeffs(spec, r)
    if delta is not None:
        p = np.asarray(spec.projection)
        return -(a + b * delta**2)[..., None, None] * (p[:, None] * p[None, :])
    eye = np.eye(d.shape[-1])
    return -(a[..., None, None] * eye + b[..., None, None] * d[..., :, None] * d[..., None, :])


def directional_terms(spec: KernelSpec, x, xp, u, v):
    """Return ``(k, u.grad_1 k, v.grad_2 k, u^T H v)`` without forming H.

    ``u`` and ``v`` broadcast against ``x`` and ``xp``. This is the
    integrand building block of the initial-position wave kernel.
    """
    _check_diff(spec)
    d, delta, r = _distance(spec, x, xp)
    k = _profile(spec, r)
    a, b = _deriv_coeffs(spec, r)
    if delta is not None:
        p = np.asarray(spec.projection)
        up, vp = u @ p, v @ p
        return k, a * delta * up, -a * delta * vp, -(a + b * delta**2) * up * vp
    ud = np.sum(u * d, axis=-1)
    vd = np.sum(v * d, axis=-1)
    uv = np.sum(u * v, axis=-1)
    return k, a * ud, -a * vd, -(a * uv + b * ud * vd)


def cross_matrix(spec: KernelSpec, X, Y, threads: int = 1, chunk: int = 256) -> np.ndarray:
    """Matrix ``K[i, j] = k(X[i], Y[j])``."""
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    out = np.empty((X.shape[0], Y.shape[0]))

    def work(sl):
        out[sl] = eval_kernel(spec, X[sl, None, :], Y[None, :, :])

    map_chunks(work, chunk_slices(X.shape[0], chunk), threads)
    return out


def gram_matrix(spec: KernelSpec, points, threads: int = 1) -> np.ndarray:
    """Symmetric Gram matrix over a point list."""
    P = np.atleast_2d(np.asarray(points, float))
    return cross_matrix(spec, P, P, threads=threads)


def std_function(spec: KernelSpec, x):
    """sigma(x) = sqrt(k(x, x))."""
    return np.sqrt(eval_kernel(spec, x, x))
