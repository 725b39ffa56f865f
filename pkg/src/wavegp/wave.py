"""Space-time covariance of the 3D wave equation driven by random initial data.

A space-time point is ``z = (x, y, z, t)``. With ``s = c|t|`` the solution is

    w(x, t) = mean over gamma of  t v0(x - s gamma) + u0(x - s gamma) - s gamma . grad u0(x - s gamma)

and independent centered GPs ``u0 ~ GP(0, ku)``, ``v0 ~ GP(0, kv)`` give
``kw = kv_wave + ku_wave`` with double sphere averages of ``kv`` and of the
``ku`` integrand ``k - s g.grad_1 k - s' g'.grad_2 k + s s' g^T H g'``.

Both factors of the last term carry ``|t|``, so ``ku_wave`` depends on time
only through ``|t|`` and ``|t'|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import wave_closed
from ._linalg import jittered_cholesky
from ._parallel import chunk_slices, map_chunks
from .errors import ConfigError
from .kernels import KernelSpec, directional_terms, eval_kernel
from .sphere import DEFAULT_RESOLUTION, SphereRule, build_sphere_rule

METHODS = ("quadrature", "closed_form")
MERGE_TOL = 1e-12


@dataclass(frozen=True)
class WaveModel:
    """Wave speed, initial-position kernel ``ku``, initial-speed kernel ``kv``
    and the sphere rule resolution used by every double-sphere average.

    ``method="closed_form"`` evaluates the sphere averages exactly (only for
    untruncated squared-exponential or constant kernels).
    """

    c: float
    ku: KernelSpec
    kv: KernelSpec
    n_theta: int = DEFAULT_RESOLUTION
    n_phi: int = DEFAULT_RESOLUTION
    method: str = "quadrature"
    _rule: SphereRule = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise ConfigError("wave speed c must be positive")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        object.__setattr__(self, "_rule", build_sphere_rule(self.n_theta, self.n_phi))

    @property
    def rule(self) -> SphereRule:
        return self._rule

    def to_text(self) -> str:
        parts = [f"c={self.c!r}"]
        for name in ("ku", "kv"):
            parts += [f"{name}.{tok}" for tok in getattr(self, name).to_text().split()]
        parts += [f"ntheta={self.n_theta}", f"nphi={self.n_phi}", f"method={self.method}"]
        return " ".join(parts)

    @classmethod
    def from_mapping(cls, items: dict) -> "WaveModel":
        if "c" not in items:
            raise ConfigError("wave speed c missing")
        for key in ("ntheta", "nphi"):
            if key not in items:
                raise ConfigError(f"sphere resolution {key} missing")
        sub = {"ku": {}, "kv": {}}
        for key, val in items.items():
            head, _, rest = key.partition(".")
            if head in sub and rest:
                sub[head][rest] = val
            elif key not in ("c", "ntheta", "nphi", "method"):
                raise ConfigError(f"unknown wave model key {key!r}")
        try:
            return cls(
                c=float(items["c"]),
                ku=KernelSpec.from_mapping(sub["ku"]),
                kv=KernelSpec.from_mapping(sub["kv"]),
                n_theta=int(items["ntheta"]),
                n_phi=int(items["nphi"]),
                method=str(items.get("method", "quadrature")),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_text(cls, text: str) -> "WaveModel":
        items = dict(tok.split("=", 1) for tok in text.split())
        return cls.from_mapping(items)


@dataclass(frozen=True)
class WaveFieldSample:
    points: np.ndarray  # (P, 4)
    values: np.ndarray  # (P,)
    seed: int

    def __post_init__(self):
        if self.points.shape[0] != self.values.shape[0]:
            raise ValueError("points and values differ in length")


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _as_points(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != 4:
        raise ValueError("space-time points must have 4 components (x, y, z, t)")
    if not np.all(np.isfinite(z)):
        raise ValueError("space-time points must be finite")
    return z


def _canonical_pairs(z: np.ndarray, zp: np.ndarray):
    """Order each pair lexicographically so that (z, z') and (z', z) run
    the identical floating point computation."""
    diff = z - zp
    nz = diff != 0
    first = np.argmax(nz, axis=-1)
    lead = np.take_along_axis(diff, first[..., None], axis=-1)[..., 0]
    swap = lead > 0
    a = np.where(swap[..., None], zp, z)
    b = np.where(swap[..., None], z, zp)
    return a, b


CLOSED_FORM_CHUNK = 1 << 15
ROW_BLOCK_PAIRS = 1 << 20
# dense joint covariances of the pathwise sampler are formed in one piece
MAX_JOINT_FEATURES = 4096


def _pairs_per_chunk(rule: SphereRule) -> int:
    return max(1, 300_000 // (len(rule) ** 2))


def _inner_block(rule: SphereRule) -> int:
    # depends on the rule only, so every pair is summed in the same order
    return min(len(rule), max(1, 300_000 // len(rule)))


def _pair_values(model: WaveModel, z: np.ndarray, zp: np.ndarray, part: str) -> np.ndarray:
    """Quadrature of kv_wave and/or ku_wave for aligned pair arrays (P, 4).

    The second sphere's nodes are visited in blocks so that memory stays
    bounded at high resolution.
    """
    rule = model.rule
    g, w = rule.nodes, rule.weights
    N = len(w)
    P = z.shape[0]
    s = model.c * np.abs(z[:, 3])
    sp = model.c * np.abs(zp[:, 3])
    q = s[:, None, None] * g  # (P, N, 3)
    qp = sp[:, None, None] * g
    Y = z[:, None, :3] - q
    Yp = zp[:, None, :3] - qp
    out = np.zeros(P)
    B = _inner_block(rule)
    for j in range(0, N, B):
        sl = slice(j, min(j + B, N))
        w2 = (w[:, None] * w[None, sl]).ravel()
        n = w2.size
        Yb, qb = Yp[:, None, sl, :], qp[:, None, sl, :]
        if part in ("kv", "kw"):
            K = np.broadcast_to(eval_kernel(model.kv, Y[:, :, None, :], Yb), (P, N, sl.stop - j))
            out += z[:, 3] * zp[:, 3] * (K.reshape(P, n) * w2).sum(axis=1)
        if part in ("ku", "kw"):
            k, g1, g2, h = directional_terms(model.ku, Y[:, :, None, :], Yb, q[:, :, None, :], qb)
            I = np.broadcast_to(k - g1 - g2 + h, (P, N, sl.stop - j))
            out += (I.reshape(P, n) * w2).sum(axis=1)
    return out


def _evaluate(model: WaveModel, z, zp, part: str, threads: int = 1):
    z, zp = np.broadcast_arrays(_as_points(z), _as_points(zp))
    shape = z.shape[:-1]
    a, b = _canonical_pairs(z.reshape(-1, 4), zp.reshape(-1, 4))
    if model.method == "closed_form":
        evaluate, size = wave_closed.pair_values, CLOSED_FORM_CHUNK
    else:
        evaluate, size = _pair_values, _pairs_per_chunk(model.rule)
    out = np.empty(a.shape[0])

    def work(sl):
        out[sl] = evaluate(model, a[sl], b[sl], part)

    map_chunks(work, chunk_slices(a.shape[0], size), threads)
    vals = out.reshape(shape)
    return float(vals) if vals.ndim == 0 else vals


# --------------------------------------------------------------------------
# covariance functions
# --------------------------------------------------------------------------


def kv_wave(model: WaveModel, z, zp, threads: int = 1):
    """Initial-speed part: t t' times the double sphere average of kv."""
    return _evaluate(model, z, zp, "kv", threads)


def ku_wave(model: WaveModel, z, zp, threads: int = 1):
    """Initial-position part, built from ku and its first and mixed derivatives."""
    return _evaluate(model, z, zp, "ku", threads)


def kw(model: WaveModel, z, zp, threads: int = 1):
    """Covariance of the wave field: kv_wave + ku_wave."""
    return _evaluate(model, z, zp, "kw", threads)


def kw_matrix(model: WaveModel, Z1, Z2=None, part: str = "kw", threads: int = 1) -> np.ndarray:
    """Covariance matrix between two space-time point sets.

    With ``Z2`` omitted the symmetric Gram matrix is built from its upper
    triangle.
    """
    Z1 = np.atleast_2d(_as_points(Z1))
    symmetric = Z2 is None
    Z2 = Z1 if symmetric else np.atleast_2d(_as_points(Z2))
    n, m = Z1.shape[0], Z2.shape[0]
    K = np.empty((n, m))
    rows = max(1, ROW_BLOCK_PAIRS // max(m, 1))
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        if symmetric:
            # upper triangle of the row block, mirrored below
            ii, jj = np.triu_indices(stop - start, m=m - start)
            ii, jj = ii + start, jj + start
            vals = _evaluate(model, Z1[ii], Z2[jj], part, threads)
            K[ii, jj] = vals
            K[jj, ii] = vals
        else:
            ii, jj = np.divmod(np.arange((stop - start) * m), m)
            K[start:stop] = np.asarray(_evaluate(model, Z1[ii + start], Z2[jj], part, threads)).reshape(-1, m)
    return K


# --------------------------------------------------------------------------
# Kirchhoff propagation and pathwise sampling
# --------------------------------------------------------------------------


def kirchhoff_propagate(u0, grad_u0, v0, c: float, rule: SphereRule, z):
    """Solution of the wave equation at ``z`` from initial position ``u0``
    (with gradient ``grad_u0``) and initial speed ``v0``.

    The callables receive arrays of shape (..., 3); ``grad_u0`` returns
    (..., 3). ``z`` may be a single point or an array of points (..., 4).
    """
    z = _as_points(z)
    t = z[..., 3]
    s = c * np.abs(t)
    q = s[..., None, None] * rule.nodes
    Y = z[..., None, :3] - q
    vals = t[..., None] * np.asarray(v0(Y), float) + np.asarray(u0(Y), float)
    vals = vals - np.sum(q * np.asarray(grad_u0(Y), float), axis=-1)
    out = np.sum(vals * rule.weights, axis=-1)
    return float(out) if out.ndim == 0 else out


def _merge_groups(keys: np.ndarray, tol: float = MERGE_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Map rows of ``keys`` to representatives, merging rows within ``tol``.

    Returns ``(rep_index, inverse)``: unique rows are ``keys[rep_index]`` and
    row ``i`` maps to unique row ``inverse[i]``.
    """
    n = keys.shape[0]
    pairs = cKDTree(keys).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(n), np.arange(n)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    # relabel components in order of first occurrence, representative = first member
    _, rep_index, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(rep_index, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return rep_index[order], rank[inverse]


def _features(model: WaveModel, points: np.ndarray):
    rule = model.rule
    s = model.c * np.abs(points[:, 3])
    q = (s[:, None, None] * rule.nodes).reshape(-1, 3)
    Y = (points[:, None, :3] - s[:, None, None] * rule.nodes).reshape(-1, 3)
    return Y, q


def wave_feature_covariances(model: WaveModel, points):
    """Joint covariance blocks used by :func:`sample_wave_field`.

    Returns a dict with the merged v-nodes, the merged (node, shift) pairs of
    the u-part, their covariance matrices and the index maps back to
    (point, sphere node).
    """
    points = np.atleast_2d(_as_points(points))
    Y, q = _features(model, points)
    v_rep, v_inv = _merge_groups(Y)
    u_rep, u_inv = _merge_groups(np.hstack([Y, q]))
    if max(len(v_rep), len(u_rep)) > MAX_JOINT_FEATURES:
        raise ConfigError(
            f"pathwise sampling needs {max(len(v_rep), len(u_rep))} joint features (limit {MAX_JOINT_FEATURES}); "
            "use fewer points or a coarser sphere rule"
        )
    Yv = Y[v_rep]
    Kv = eval_kernel(model.kv, Yv[:, None, :], Yv[None, :, :])
    Kv = np.broadcast_to(Kv, (len(v_rep), len(v_rep))).copy()
    Yu, qu = Y[u_rep], q[u_rep]
    k, g1, g2, h = directional_terms(model.ku, Yu[:, None, :], Yu[None, :, :], qu[:, None, :], qu[None, :, :])
    Ku = np.broadcast_to(k - g1 - g2 + h, (len(u_rep), len(u_rep))).copy()
    return dict(v_nodes=Yv, v_cov=Kv, v_index=v_inv, u_nodes=Yu, u_shift=qu, u_cov=Ku, u_index=u_inv)


def sample_wave_field(model: WaveModel, points, seed: int) -> WaveFieldSample:
    """One pathwise sample of the wave field at ``points``.

    Initial-speed values at every shifted node and the initial-position
    combinations ``u0(y) - q.grad u0(y)`` are drawn jointly by jittered
    Cholesky, then pushed through the Kirchhoff quadrature. The result is a
    deterministic function of (model, points, seed).
    """
    points = np.atleast_2d(_as_points(points))
    values = draw_wave_field(model, points, sampling_plan(model, points), seed)
    return WaveFieldSample(points=points, values=values, seed=int(seed))


def sampling_plan(model: WaveModel, points: np.ndarray):
    """Cholesky factors and index maps reused by every draw at ``points``."""
    blocks = wave_feature_covariances(model, points)
    Lv, _ = jittered_cholesky(blocks["v_cov"])
    Lu, _ = jittered_cholesky(blocks["u_cov"])
    return Lv, Lu, blocks["v_index"], blocks["u_index"]


def draw_wave_field(model: WaveModel, points: np.ndarray, plan, seed: int) -> np.ndarray:
    Lv, Lu, v_index, u_index = plan
    rng = np.random.default_rng(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    gv = Lv @ rng.standard_normal(Lv.shape[0])
    gu = Lu @ rng.standard_normal(Lu.shape[0])
    N = len(model.rule)
    w = model.rule.weights
    return points[:, 3] * (gv[v_index].reshape(-1, N) @ w) + gu[u_index].reshape(-1, N) @ w
