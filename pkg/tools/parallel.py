# tools/parallel.py
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

RowEvaluator = Callable[[np.ndarray], np.ndarray]

# chunking must not depend on the worker count, otherwise BLAS blocking
# could change the bits of the results
CHUNK_ROWS = 2048


def evaluate_rows(f: RowEvaluator, X: np.ndarray, *, threads: int = 1, chunk_rows: int = CHUNK_ROWS) -> np.ndarray:
    """
    Evaluates a batch evaluator f (m x n -> m) over the rows of X.
    Chunks are fixed-size and gathered in row order, so the output is the
    same for any `threads`.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D design, got shape {X.shape}")
    m = X.shape[0]
    if m == 0:
        return np.zeros(0, dtype=float)

    chunks = [X[i : i + chunk_rows] for i in range(0, m, chunk_rows)]

    def run(chunk: np.ndarray) -> np.ndarray:
        y = np.asarray(f(chunk), dtype=float).reshape(-1)
        if y.shape[0] != chunk.shape[0]:
            raise ValueError(f"evaluator returned {y.shape[0]} values for {chunk.shape[0]} rows")
        return y

    parts = ordered_map(run, chunks, threads=threads)
    return np.concatenate(parts)


def ordered_map(fn: Callable[[T], R], items: Sequence[T], *, threads: int = 1) -> List[R]:
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
