"""Cholesky factorizations with explicit jitter handling."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import CholeskyFailure, SingularGram

JITTER_START = 1e-12
JITTER_MAX = 1e-6
JITTER_FACTOR = 10.0


def _smallest_eigenvalue(K: np.ndarray) -> float:
    return float(sla.eigvalsh(K, subset_by_index=[0, 0])[0])


def cholesky_checked(K: np.ndarray, jitter: float = 0.0) -> np.ndarray:
    """Lower Cholesky factor of ``K + jitter I``.

    Raises SingularGram when the factorization breaks down or when a pivot
    falls below ``n * eps * max(diag K)`` (numerically rank deficient).
    """
    n = K.shape[0]
    A = K + jitter * np.eye(n) if jitter else K
    try:
        L = sla.cholesky(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        raise SingularGram("Gram matrix is not positive definite", _smallest_eigenvalue(A)) from None
    pivots = np.diag(L) ** 2
    floor = n * np.finfo(float).eps * max(float(np.max(np.diag(A))), np.finfo(float).tiny)
    if pivots.min() <= floor:
        raise SingularGram("Gram matrix is numerically singular", float(pivots.min()))
    return L


def jittered_cholesky(K: np.ndarray, start: float = JITTER_START, maximum: float = JITTER_MAX, scale=None):
    """Factor ``K + j I`` with ``j`` escalating by 10x from ``start * scale``
    up to ``maximum * scale``; ``scale`` defaults to ``trace(K) / n``.

    Returns ``(L, j)``. A zero matrix returns a zero factor and ``j = 0``.
    Raises CholeskyFailure if even the largest jitter does not suffice.
    """
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    if scale is None:
        scale = float(np.trace(K)) / n
    if scale == 0.0 and not np.any(K):
        return np.zeros_like(K), 0.0
    if scale <= 0.0:
        raise CholeskyFailure("covariance has non-positive trace", -_smallest_eigenvalue(K))
    j = start * scale
    eye = np.eye(n)
    while j <= maximum * scale * (1 + 1e-9):
        try:
            return sla.cholesky(K + j * eye, lower=True), j
        except np.linalg.LinAlgError:
            j *= JITTER_FACTOR
    lam = _smallest_eigenvalue(K)
    raise CholeskyFailure(
        f"factorization failed at maximum jitter {maximum * scale:.3e}", max(-lam, 0.0) * 1.01 + start * scale
    )
