"""Product quadrature on the unit sphere for the normalized measure dOmega/4pi.

Nodes are Gauss-Legendre in cos(theta) times equispaced azimuths. A rule
with ``n_theta`` x ``n_phi`` nodes integrates spherical polynomials of
degree ``min(2 n_theta - 1, n_phi - 1)`` exactly. With ``n_phi`` even the
node set is invariant under gamma -> -gamma.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidResolution

DEFAULT_RESOLUTION = 16


@lru_cache(maxsize=64)
def _gauss_legendre_cached(n: int):
    k = np.arange(1, n + 1)
    # Tricomi initial guess, refined by Newton on P_n
    x = np.cos(np.pi * (k - 0.25) / (n + 0.5)) * (1 - (n - 1) / (8.0 * n**3))
    for _ in range(100):
        p0, p1 = np.ones_like(x), x.copy()
        for j in range(2, n + 1):
            p0, p1 = p1, ((2 * j - 1) * x * p1 - (j - 1) * p0) / j
        dp = n * (x * p1 - p0) / (x * x - 1.0)
        step = p1 / dp
        x = x - step
        if np.max(np.abs(step)) < 1e-16:
            break
    p0, p1 = np.ones_like(x), x.copy()
    for j in range(2, n + 1):
        p0, p1 = p1, ((2 * j - 1) * x * p1 - (j - 1) * p0) / j
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    x, w = x[order], w[order]
    # enforce exact symmetry of the node set
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1], ascending."""
    if int(n) != n or n < 1:
        raise InvalidResolution(f"Gauss-Legendre order must be a positive integer, got {n!r}")
    return _gauss_legendre_cached(int(n))


@dataclass(frozen=True, eq=False)
class SphereRule:
    nodes: np.ndarray  # (N, 3) unit vectors
    weights: np.ndarray  # (N,) positive, summing to one
    n_theta: int
    n_phi: int

    def __len__(self):
        return self.weights.shape[0]

    @property
    def exactness_degree(self) -> int:
        return min(2 * self.n_theta - 1, self.n_phi - 1)


@lru_cache(maxsize=32)
def build_sphere_rule(n_theta: int = DEFAULT_RESOLUTION, n_phi: int = DEFAULT_RESOLUTION) -> SphereRule:
    for name, n in (("n_theta", n_theta), ("n_phi", n_phi)):
        if int(n) != n or n < 1:
            raise InvalidResolution(f"{name} must be a positive integer, got {n!r}")
    mu, wmu = gauss_legendre(int(n_theta))
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    sin_t = np.sqrt(1.0 - mu * mu)
    nodes = np.stack(
        [
            np.outer(sin_t, np.cos(phi)).ravel(),
            np.outer(sin_t, np.sin(phi)).ravel(),
            np.repeat(mu, n_phi),
        ],
        axis=-1,
    )
    nodes /= np.linalg.norm(nodes, axis=-1, keepdims=True)
    weights = np.repeat(0.5 * wmu / n_phi, n_phi)
    weights /= weights.sum()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return SphereRule(nodes, weights, int(n_theta), int(n_phi))


def integrate_sphere(rule: SphereRule, f) -> float:
    """Sum_j w_j f(gamma_j).

    ``f`` is first called once on the (N, 3) node array; callables that only
    accept a single unit vector are evaluated node by node.
    """
    try:
        vals = np.asarray(f(rule.nodes), dtype=float)
    except (TypeError, ValueError, IndexError):
        vals = None
    if vals is None or vals.shape != rule.weights.shape:
        vals = np.array([f(g) for g in rule.nodes], dtype=float)
    return float(np.dot(rule.weights, vals))


def integrate_double_sphere(rule_a: SphereRule, rule_b: SphereRule, f) -> float:
    """Tensor-product sum over two sphere rules.

    ``f`` receives broadcastable arrays of shape (Na, 1, 3) and (1, Nb, 3).
    """
    vals = np.asarray(f(rule_a.nodes[:, None, :], rule_b.nodes[None, :, :]), dtype=float)
    vals = np.broadcast_to(vals, (len(rule_a), len(rule_b)))
    return float(rule_a.weights @ vals @ rule_b.weights)
