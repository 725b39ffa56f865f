"""Deterministic chunked evaluation.

Work is split into chunks of a fixed size that does not depend on the
number of threads, so every output entry is produced by exactly the same
floating point operations whatever ``threads`` is.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np


def chunk_slices(n: int, size: int) -> list[slice]:
    size = max(int(size), 1)
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def map_chunks(fn: Callable[[slice], np.ndarray], slices: Sequence[slice], threads: int = 1) -> list:
    if threads <= 1 or len(slices) <= 1:
        return [fn(sl) for sl in slices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, slices))
