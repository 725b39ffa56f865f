"""Kriging (zero-mean Gaussian process conditioning) on pointwise data.

Any covariance source can be used: a :class:`KernelSpec`, a
:class:`WaveModel` or a plain callable ``k(A, B) -> matrix``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.linalg as sla

from ._linalg import JITTER_FACTOR, JITTER_MAX, cholesky_checked, jittered_cholesky
from .errors import ConfigError, SingularGram
from .kernels import KernelSpec, cross_matrix
from .wave import WaveModel, kw_matrix

CovFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
KernelLike = Union[KernelSpec, WaveModel, CovFn]


def as_cov_fn(kernel: KernelLike, threads: int = 1) -> CovFn:
    """Uniform ``k(A, B) -> (len(A), len(B))`` view of a covariance source."""
    if isinstance(kernel, KernelSpec):
        return lambda A, B: cross_matrix(kernel, A, B, threads=threads)
    if isinstance(kernel, WaveModel):
        return lambda A, B: kw_matrix(kernel, A, B, threads=threads)
    if callable(kernel):
        return kernel
    raise TypeError(f"not a covariance source: {kernel!r}")


def _gram(kernel: KernelLike, X: np.ndarray, threads: int = 1) -> np.ndarray:
    if isinstance(kernel, WaveModel):
        return kw_matrix(kernel, X, threads=threads)
    return as_cov_fn(kernel, threads)(X, X)


@dataclass(frozen=True)
class ObservationSet:
    X: np.ndarray
    y: np.ndarray
    jitter: float = 0.0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, float))
        y = np.asarray(self.y, float).ravel()
        if X.shape[0] != y.shape[0] or y.shape[0] < 1:
            raise ConfigError("observation set needs matching, non-empty X and y")
        if self.jitter < 0:
            raise ConfigError("jitter must be nonnegative")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True, eq=False)
class Posterior:
    kernel: KernelLike
    obs: ObservationSet
    chol: np.ndarray  # lower factor of k(X, X) + jitter I
    alpha: np.ndarray  # (k(X, X) + jitter I)^-1 y
    jitter: float
    threads: int = 1

    @property
    def cov_fn(self) -> CovFn:
        return as_cov_fn(self.kernel, self.threads)


def fit_posterior(kernel: KernelLike, obs: ObservationSet, escalate: bool = False, threads: int = 1) -> Posterior:
    """Factor the observation Gram matrix and cache the solve against ``y``.

    The jitter of ``obs`` is used as is. With ``escalate=True`` a failed
    factorization is retried with jitter growing 10x per step, starting at
    ``max(obs.jitter, 1e-12 trace/n)``, up to ``1e-6 trace/n``.
    """
    K = _gram(kernel, obs.X, threads)
    jitter = obs.jitter
    while True:
        try:
            L = cholesky_checked(K, jitter)
            break
        except SingularGram:
            scale = np.trace(K) / K.shape[0]
            if not escalate or jitter >= JITTER_MAX * scale:
                raise
            jitter = max(jitter * JITTER_FACTOR, 1e-12 * scale)
    alpha = sla.cho_solve((L, True), obs.y)
    return Posterior(kernel, obs, L, alpha, jitter, threads)


def posterior_mean(post: Posterior, Z) -> np.ndarray:
    """k(Z, X) alpha."""
    Z = np.atleast_2d(np.asarray(Z, float))
    return post.cov_fn(Z, post.obs.X) @ post.alpha


def posterior_cov(post: Posterior, Z1, Z2) -> np.ndarray:
    """k(Z1, Z2) - k(Z1, X) K^-1 k(X, Z2)."""
    Z1 = np.atleast_2d(np.asarray(Z1, float))
    Z2 = np.atleast_2d(np.asarray(Z2, float))
    k = post.cov_fn
    V1 = sla.solve_triangular(post.chol, k(post.obs.X, Z1), lower=True)
    V2 = V1 if Z2 is Z1 else sla.solve_triangular(post.chol, k(post.obs.X, Z2), lower=True)
    return k(Z1, Z2) - V1.T @ V2


def posterior_var(post: Posterior, Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, float))
    k = post.cov_fn
    V = sla.solve_triangular(post.chol, k(post.obs.X, Z), lower=True)
    prior = np.array([k(z[None], z[None])[0, 0] for z in Z])
    return prior - np.sum(V * V, axis=0)


def posterior_std(post: Posterior, Z) -> np.ndarray:
    return np.sqrt(np.maximum(posterior_var(post, Z), 0.0))


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)


def sample_prior(kernel: KernelLike, points, seed: int, threads: int = 1) -> np.ndarray:
    """One draw of the centered GP at ``points`` (jittered Cholesky)."""
    P = np.atleast_2d(np.asarray(points, float))
    L, _ = jittered_cholesky(_gram(kernel, P, threads))
    return L @ _rng(seed).standard_normal(L.shape[0])


def sample_posterior(post: Posterior, points, seed: int) -> np.ndarray:
    """One draw of the conditioned GP at ``points``.

    Jitter is scaled by the prior variance, since the posterior covariance
    may vanish (at observed points) to rounding level.
    """
    P = np.atleast_2d(np.asarray(points, float))
    prior = post.cov_fn(P, P)
    C = posterior_cov(post, P, P)
    C = 0.5 * (C + C.T)
    L, _ = jittered_cholesky(C, scale=float(np.trace(prior)) / P.shape[0])
    return posterior_mean(post, P) + L @ _rng(seed).standard_normal(L.shape[0])


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------


def read_observations(path, jitter: float = 0.0) -> ObservationSet:
    """Read ``x,y,z,value`` or ``x,y,z,t,value`` columns (header required)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        raise ConfigError(f"{path}: empty observation file")
    header = [h.strip() for h in rows[0]]
    if header not in (["x", "y", "z", "value"], ["x", "y", "z", "t", "value"]):
        raise ConfigError(f"{path}: expected header x,y,z[,t],value, got {','.join(header)}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != len(header):
        raise ConfigError(f"{path}: malformed observation rows")
    return ObservationSet(data[:, :-1], data[:, -1], jitter)
