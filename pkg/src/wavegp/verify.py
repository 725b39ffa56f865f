"""Numerical checks of linear PDE constraints in the sense of distributions.

A function ``f`` solves ``L f = 0`` weakly when ``<f, L* phi> = 0`` for every
test function ``phi``. Here ``phi`` ranges over a finite, seeded bank of
ellipsoidal bumps and the pairing is computed by quadrature over the bump
support. For a covariance ``k`` the check is applied to ``z -> k(z, z')`` at
a set of anchors ``z'``; for a random field it is applied pathwise by Monte
Carlo.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from itertools import product
from math import comb
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from ._linalg import jittered_cholesky
from .errors import ConfigError, MissingCoefficientDerivative
from .gpr import KernelLike, _gram, as_cov_fn
from .sphere import gauss_legendre
from .wave import WaveModel, _as_points, draw_wave_field, sampling_plan

MAX_ORDER = 2

# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Coefficient:
    """Variable coefficient ``a(z)`` with analytic partial derivatives.

    ``derivatives`` maps a multi-index to a callable; callables take an
    (n, D) array and return (n,).
    """

    func: Callable[[np.ndarray], np.ndarray]
    derivatives: Mapping[tuple, Callable[[np.ndarray], np.ndarray]] = field(default_factory=dict)

    def derivative(self, beta: tuple) -> Callable[[np.ndarray], np.ndarray]:
        if sum(beta) == 0:
            return self.func
        try:
            return self.derivatives[tuple(beta)]
        except KeyError:
            raise MissingCoefficientDerivative(f"coefficient derivative {tuple(beta)} not supplied") from None


@dataclass(frozen=True, eq=False)
class Term:
    alpha: tuple
    coeff: Union[float, Coefficient]

    @property
    def order(self) -> int:
        return int(sum(self.alpha))


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """``L = sum_alpha a_alpha d^alpha`` on R^dim, orders at most 2."""

    dim: int
    terms: tuple
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for term in self.terms:
            if len(term.alpha) != self.dim or min(term.alpha) < 0:
                raise ConfigError(f"multi-index {term.alpha} does not match dimension {self.dim}")
            if term.order > MAX_ORDER:
                raise ConfigError(f"operator order {term.order} exceeds {MAX_ORDER}")

    def apply(self, derivs: Callable[[tuple], np.ndarray], Z: np.ndarray) -> np.ndarray:
        """L f at ``Z`` given ``derivs(alpha) -> d^alpha f(Z)``."""
        out = np.zeros(Z.shape[0])
        for term in self.terms:
            a = term.coeff.func(Z) if isinstance(term.coeff, Coefficient) else term.coeff
            out = out + a * derivs(term.alpha)
        return out

    def to_text(self) -> str:
        if self.name != "custom":
            return self.name
        body = ",".join(
            "(" + ",".join(str(a) for a in t.alpha) + ";" + repr(float(t.coeff)) + ")" for t in self.terms
        )
        return f"custom terms=[{body}]"


def _unit(dim, *idx):
    a = [0] * dim
    for i in idx:
        a[i] += 1
    return tuple(a)


def dalembertian(c: float) -> OperatorSpec:
    """(1/c^2) d_tt - Laplacian on (x, y, z, t)."""
    if not c > 0:
        raise ConfigError("wave speed c must be positive")
    terms = [Term(_unit(4, 3, 3), 1.0 / c**2)] + [Term(_unit(4, i, i), -1.0) for i in range(3)]
    return OperatorSpec(4, terms, name=f"dalembert c={c!r}")


def transport2d() -> OperatorSpec:
    """d_x + d_y on R^2."""
    return OperatorSpec(2, [Term((1, 0), 1.0), Term((0, 1), 1.0)], name="transport2d")


_TERM_RE = re.compile(r"\(\s*([0-9,\s]+);\s*([^)]+)\)")


def parse_terms(text: str) -> OperatorSpec:
    """Parse ``[(a1,...,aD;coeff),...]`` into a constant-coefficient operator."""
    body = text.strip()
    if not (body.startswith("[") and body.endswith("]")):
        raise ConfigError(f"terms must be a bracketed list, got {text!r}")
    found = _TERM_RE.findall(body)
    if not found or _TERM_RE.sub("", body[1:-1]).replace(",", "").strip():
        raise ConfigError(f"malformed operator terms {text!r}")
    terms = []
    try:
        for idx, coeff in found:
            terms.append(Term(tuple(int(v) for v in idx.split(",")), float(coeff)))
    except ValueError as exc:
        raise ConfigError(f"malformed operator terms: {exc}") from None
    dims = {len(t.alpha) for t in terms}
    if len(dims) != 1:
        raise ConfigError("all multi-indices must have the same length")
    return OperatorSpec(dims.pop(), terms)


# --------------------------------------------------------------------------
# test functions
# --------------------------------------------------------------------------

_Q_MAX = 700.0  # exp(1 - q) underflows beyond this


@dataclass(frozen=True, eq=False)
class BumpTestFunction:
    """``phi(z) = exp(1 - 1/(1 - s))`` for ``s = sum(((z - center)/radii)^2) < 1``."""

    center: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, float).ravel()
        r = np.asarray(self.radii, float).ravel()
        if c.shape != r.shape or np.any(r <= 0) or not np.all(np.isfinite(c)):
            raise ConfigError("bump needs matching center and positive radii")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radii", r)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def _profile(self, Z):
        Z = np.atleast_2d(np.asarray(Z, float))
        s = np.sum(((Z - self.center) / self.radii) ** 2, axis=-1)
        inside = s < 1.0
        q = np.where(inside, 1.0 / np.where(inside, 1.0 - s, 1.0), np.inf)
        live = q < _Q_MAX
        qs = np.where(live, q, 0.0)
        phi = np.where(live, np.exp(1.0 - qs), 0.0)
        phi_s = -(qs**2) * phi
        phi_ss = phi * (qs**4 - 2.0 * qs**3)
        grad_s = 2.0 * (Z - self.center) / self.radii**2
        return phi, phi_s, phi_ss, grad_s

    def value(self, Z) -> np.ndarray:
        return self._profile(Z)[0]

    def gradient(self, Z) -> np.ndarray:
        _, phi_s, _, gs = self._profile(Z)
        return phi_s[:, None] * gs

    def hessian(self, Z) -> np.ndarray:
        _, phi_s, phi_ss, gs = self._profile(Z)
        diag = np.diag(2.0 / self.radii**2)
        return phi_ss[:, None, None] * gs[:, :, None] * gs[:, None, :] + phi_s[:, None, None] * diag

    def derivative(self, Z, alpha: tuple) -> np.ndarray:
        """d^alpha phi for |alpha| <= 2."""
        idx = [i for i, a in enumerate(alpha) for _ in range(a)]
        if len(idx) > MAX_ORDER:
            raise ConfigError("bump derivatives are available up to order 2")
        phi, phi_s, phi_ss, gs = self._profile(Z)
        if not idx:
            return phi
        if len(idx) == 1:
            return phi_s * gs[:, idx[0]]
        i, j = idx
        out = phi_ss * gs[:, i] * gs[:, j]
        if i == j:
            out = out + phi_s * 2.0 / self.radii[i] ** 2
        return out


def make_bump_bank(n: int, lo, hi, seed: int, radius_range=(0.3, 1.0), scale: float = 1.0) -> list:
    """``n`` bumps with centers uniform in the box [lo, hi] and radii drawn
    uniformly in ``radius_range`` times ``scale``, independently per axis."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    bank = []
    for _ in range(n):
        center = rng.uniform(lo, hi)
        radii = rng.uniform(radius_range[0], radius_range[1], size=lo.shape) * scale
        bank.append(BumpTestFunction(center, radii))
    return bank


# --------------------------------------------------------------------------
# quadrature over a bump support
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuadRule:
    nodes: np.ndarray
    weights: np.ndarray
    label: str

    def __len__(self):
        return self.weights.shape[0]


def box_rule(bump: BumpTestFunction, n) -> QuadRule:
    """Tensor Gauss-Legendre rule on the bounding box of the bump."""
    ns = (int(n),) * bump.dim if np.isscalar(n) else tuple(int(v) for v in n)
    axes, ws = [], []
    for i, k in enumerate(ns):
        x, w = gauss_legendre(k)
        axes.append(bump.center[i] + bump.radii[i] * x)
        ws.append(bump.radii[i] * w)
    nodes = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    weights = np.ones(1)
    for w in ws:
        weights = np.multiply.outer(weights, w).ravel()
    return QuadRule(nodes, weights, "box:" + "x".join(str(k) for k in ns))


def _unit_sphere_rule(dim: int, n: int):
    """Product rule on S^{dim-1} (surface measure, unnormalized)."""
    phi = 2.0 * np.pi * np.arange(2 * n) / (2 * n)
    wphi = np.full(2 * n, np.pi / n)
    if dim == 2:
        return np.stack([np.cos(phi), np.sin(phi)], -1), wphi
    mu, wmu = gauss_legendre(n)
    st = np.sqrt(1.0 - mu**2)
    s2 = np.stack([np.outer(st, np.cos(phi)).ravel(), np.outer(st, np.sin(phi)).ravel(), np.repeat(mu, 2 * n)], -1)
    w2 = np.outer(wmu, wphi).ravel()
    if dim == 3:
        return s2, w2
    if dim == 4:
        # psi in (0, pi) with weight sin^2(psi): Gauss-Chebyshev of the second kind in cos(psi)
        k = np.arange(1, n + 1)
        psi = k * np.pi / (n + 1)
        wpsi = np.pi / (n + 1) * np.sin(psi) ** 2
        nodes = np.concatenate(
            [np.repeat(np.cos(psi), len(w2))[:, None], np.kron(np.sin(psi)[:, None], s2)], axis=-1
        )
        return nodes, np.outer(wpsi, w2).ravel()
    raise ConfigError(f"polar rules are available for dimensions 2-4, not {dim}")


def polar_rule(bump: BumpTestFunction, n_radial: int, n_angular: int) -> QuadRule:
    """Rule in stretched polar coordinates centred on the bump.

    The bump is smooth along every ray except at the support boundary
    ``r = 1``, which here is an endpoint of the radial Gauss rule rather than
    an interior kink of the integrand, so convergence is much faster than on
    the bounding box.
    """
    D = bump.dim
    if D == 1:
        return box_rule(bump, n_radial)
    x, w = gauss_legendre(int(n_radial))
    r = 0.5 * (x + 1.0)
    wr = 0.5 * w * r ** (D - 1)
    omega, wom = _unit_sphere_rule(D, int(n_angular))
    nodes = bump.center + bump.radii * (r[:, None, None] * omega[None, :, :])
    weights = np.outer(wr, wom).ravel() * np.prod(bump.radii)
    return QuadRule(nodes.reshape(-1, D), weights, f"polar:{int(n_radial)},{int(n_angular)}")


RuleSpec = Union[str, Callable[[BumpTestFunction], QuadRule]]

# rule used when none is given, by dimension: the box rule copes best with
# kinks of nonsmooth fields, the polar rule converges fastest for smooth ones
DEFAULT_RULES = {1: "box:128", 2: "box:128", 3: "polar:64,8", 4: "polar:64,8"}


def make_rule(bump: BumpTestFunction, spec: RuleSpec) -> QuadRule:
    """Build a rule from ``"box:N"``, ``"box:N1xN2..."``, ``"polar:NR,NA"`` or a callable."""
    if callable(spec):
        return spec(bump)
    kind, _, args = str(spec).partition(":")
    try:
        if kind == "box":
            parts = [int(v) for v in args.split("x")]
            return box_rule(bump, parts[0] if len(parts) == 1 else parts)
        if kind == "polar":
            nr, na = (int(v) for v in args.split(","))
            return polar_rule(bump, nr, na)
    except ValueError:
        pass
    raise ConfigError(f"bad quadrature rule {spec!r}; expected box:N or polar:NR,NA")


# --------------------------------------------------------------------------
# adjoint and residuals
# --------------------------------------------------------------------------


def apply_adjoint(op: OperatorSpec, bump: BumpTestFunction) -> Callable[[np.ndarray], np.ndarray]:
    """``L* phi = sum (-1)^|alpha| d^alpha (a_alpha phi)`` via Leibniz' rule."""
    if bump.dim != op.dim:
        raise ConfigError(f"bump dimension {bump.dim} does not match operator dimension {op.dim}")
    plan = []
    for term in op.terms:
        sign = (-1.0) ** term.order
        if not isinstance(term.coeff, Coefficient):
            plan.append((sign * term.coeff, None, term.alpha))
            continue
        for beta in product(*(range(a + 1) for a in term.alpha)):
            mult = float(np.prod([comb(a, b) for a, b in zip(term.alpha, beta)]))
            rest = tuple(a - b for a, b in zip(term.alpha, beta))
            plan.append((sign * mult, term.coeff.derivative(beta), rest))

    def adjoint(Z):
        Z = np.atleast_2d(np.asarray(Z, float))
        out = np.zeros(Z.shape[0])
        for mult, coef, alpha in plan:
            val = mult * bump.derivative(Z, alpha)
            if coef is not None:
                val = val * coef(Z)
            out = out + val
        return out

    return adjoint


def residual(f: Callable[[np.ndarray], np.ndarray], op: OperatorSpec, bump: BumpTestFunction, rule: QuadRule) -> float:
    """Quadrature of ``<f, L* phi>`` over the bump support."""
    lphi = apply_adjoint(op, bump)(rule.nodes)
    return float(np.sum(rule.weights * lphi * np.asarray(f(rule.nodes), float)))


@dataclass(frozen=True)
class ResidualReport:
    anchor: Optional[tuple]
    bump_center: tuple
    bump_radii: tuple
    raw: float
    normalization: float
    normalized: float
    passed: bool
    resolution: str

    def to_dict(self) -> dict:
        return {
            "anchor": None if self.anchor is None else list(self.anchor),
            "bump_center": list(self.bump_center),
            "bump_radii": list(self.bump_radii),
            "raw": self.raw,
            "normalization": self.normalization,
            "normalized": self.normalized,
            "pass": self.passed,
            "resolution": self.resolution,
        }


def _report(values, lphi, rule, bump, tol, anchor) -> ResidualReport:
    raw = float(np.sum(rule.weights * lphi * values))
    norm = float(np.sum(rule.weights * np.abs(lphi))) * float(np.max(np.abs(values)))
    if norm > 0:
        normalized = raw / norm
    else:
        normalized = 0.0 if raw == 0 else float("inf")
    return ResidualReport(
        anchor=None if anchor is None else tuple(float(v) for v in anchor),
        bump_center=tuple(float(v) for v in bump.center),
        bump_radii=tuple(float(v) for v in bump.radii),
        raw=raw,
        normalization=norm,
        normalized=normalized,
        passed=bool(abs(normalized) <= tol),
        resolution=rule.label,
    )


def residual_report(f, op: OperatorSpec, bump: BumpTestFunction, rule: QuadRule, tol: float, anchor=None) -> ResidualReport:
    """Raw and scale-free residual of ``f``.

    The normalization ``(integral of |L* phi|) * max|f|`` over the rule nodes
    is invariant under rescaling of ``f`` and of ``phi``.
    """
    lphi = apply_adjoint(op, bump)(rule.nodes)
    return _report(np.asarray(f(rule.nodes), float), lphi, rule, bump, tol, anchor)


def kernel_field_factory(kernel: KernelLike, threads: int = 1):
    """``z' -> (z -> k(z, z'))`` for any covariance source."""
    cov = as_cov_fn(kernel, threads)

    def factory(anchor):
        anchor = np.atleast_2d(np.asarray(anchor, float))
        return lambda Z: cov(np.atleast_2d(Z), anchor)[:, 0]

    return factory


def verify_kernel_constraint(
    field_factory, op: OperatorSpec, anchors, bank: Sequence[BumpTestFunction], rule: RuleSpec, tol: float
) -> list:
    """One :class:`ResidualReport` per (anchor, bump) pair.

    ``field_factory`` maps an anchor ``z'`` to the function ``z -> k(z, z')``
    (see :func:`kernel_field_factory`). The kernel passes when every
    report passes.
    """
    anchors = np.atleast_2d(np.asarray(anchors, float))
    reports = []
    for bump in bank:
        q = make_rule(bump, rule)
        lphi = apply_adjoint(op, bump)(q.nodes)
        for anchor in anchors:
            values = np.asarray(field_factory(anchor)(q.nodes), float)
            reports.append(_report(values, lphi, q, bump, tol, anchor))
    return reports


def all_passed(reports) -> bool:
    return all(r.passed for r in reports)


# --------------------------------------------------------------------------
# Monte Carlo over sample paths
# --------------------------------------------------------------------------


def derive_seed(base_seed: int, index: int) -> int:
    return (int(base_seed) ^ int(index)) & 0xFFFFFFFFFFFFFFFF


class GaussianFieldSampler:
    """Seeded sampler of a centered GP at arbitrary node sets.

    The jittered Cholesky factor of the node Gram matrix is cached per node
    set, so repeated draws on one quadrature rule cost a matrix-vector
    product each.
    """

    def __init__(self, kernel: KernelLike, threads: int = 1):
        self.kernel = kernel
        self.threads = threads
        self._cache: dict = {}
        self.jitter = None

    def factor(self, nodes: np.ndarray) -> np.ndarray:
        key = nodes.tobytes()
        if key not in self._cache:
            self._cache.clear()
            L, self.jitter = jittered_cholesky(_gram(self.kernel, nodes, self.threads))
            self._cache[key] = L
        return self._cache[key]

    def __call__(self, nodes, seed: int) -> np.ndarray:
        nodes = np.atleast_2d(np.asarray(nodes, float))
        L = self.factor(nodes)
        return L @ np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF).standard_normal(L.shape[0])


class PathwiseWaveSampler:
    """Kirchhoff-based wave field sampler (see :func:`wave.sample_wave_field`)
    with the factorizations cached per node set."""

    def __init__(self, model: WaveModel):
        self.model = model
        self._cache: dict = {}

    def __call__(self, points, seed: int) -> np.ndarray:
        points = np.atleast_2d(_as_points(points))
        key = points.tobytes()
        if key not in self._cache:
            self._cache.clear()
            self._cache[key] = sampling_plan(self.model, points)
        return draw_wave_field(self.model, points, self._cache[key], seed)


@dataclass(frozen=True)
class MonteCarloStats:
    n_samples: int
    mean: float
    second_moment: float
    se_mean: float
    se_second_moment: float
    residuals: tuple

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "mean": self.mean,
            "second_moment": self.second_moment,
            "se_mean": self.se_mean,
            "se_second_moment": self.se_second_moment,
        }


def monte_carlo_pathwise(sampler, op: OperatorSpec, bump: BumpTestFunction, rule: RuleSpec, n_samples: int, base_seed: int) -> MonteCarloStats:
    """Statistics of ``r = <U, L* phi>`` over ``n_samples`` seeded paths.

    Path ``i`` uses seed ``base_seed XOR i``.
    """
    if n_samples < 2:
        raise ConfigError("need at least two Monte Carlo samples")
    q = make_rule(bump, rule)
    cw = q.weights * apply_adjoint(op, bump)(q.nodes)
    r = np.array([float(cw @ np.asarray(sampler(q.nodes, derive_seed(base_seed, i)), float)) for i in range(n_samples)])
    r2 = r * r
    n = float(n_samples)
    return MonteCarloStats(
        n_samples=n_samples,
        mean=float(r.mean()),
        second_moment=float(r2.mean()),
        se_mean=float(r.std(ddof=1) / np.sqrt(n)),
        se_second_moment=float(r2.std(ddof=1) / np.sqrt(n)),
        residuals=tuple(float(v) for v in r),
    )


def residual_second_moment(kernel: KernelLike, op: OperatorSpec, bump: BumpTestFunction, rule: RuleSpec, threads: int = 1) -> float:
    """E[<U, L* phi>^2] under GP(0, k) with the same quadrature, i.e. the
    deterministic floor ``c^T K c`` with ``c = weights * L* phi``."""
    q = make_rule(bump, rule)
    cw = q.weights * apply_adjoint(op, bump)(q.nodes)
    K = _gram(kernel, q.nodes, threads)
    return float(cw @ K @ cw)
