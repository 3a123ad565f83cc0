"""Cosine distances, exact k-NN and the first/second-NN ratio test."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Optional, Sequence

import numpy as np

# Row-block size for distance matrices. Fixed (never derived from n_jobs) so
# that the floating-point result is identical for any degree of parallelism.
BLOCK = 256


class NeighborList(NamedTuple):
    query: int
    ids: tuple[int, ...]
    distances: tuple[float, ...]

    def __len__(self):
        return len(self.ids)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """``1 - a.b`` for unit vectors; lies in [0, 2]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"incompatible embeddings: shapes {a.shape} and {b.shape}")
    return 1.0 - float(np.dot(a, b))


def _block(a: np.ndarray, b: np.ndarray, start: int) -> np.ndarray:
    return 1.0 - a[start:start + BLOCK] @ b.T


def pairwise_distances(a: np.ndarray, b: Optional[np.ndarray] = None,
                       n_jobs: Optional[int] = None) -> np.ndarray:
    """Dense ``1 - a @ b.T``, computed in fixed row blocks.

    ``n_jobs`` > 1 evaluates blocks on a thread pool; output is bit-identical
    to the sequential path.
    """
    if b is None:
        b = a
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"incompatible embeddings: {a.shape} vs {b.shape}")
    n = a.shape[0]
    out = np.empty((n, b.shape[0]))
    starts = range(0, n, BLOCK)
    if n_jobs is not None and n_jobs > 1 and n > BLOCK:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            for s, blk in zip(starts, ex.map(lambda s: _block(a, b, s), starts)):
                out[s:s + BLOCK] = blk
    else:
        for s in starts:
            out[s:s + BLOCK] = _block(a, b, s)
    return out


def first_neighbors(m: np.ndarray, n_jobs: Optional[int] = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Index and distance of each row's nearest other row (ties -> lowest index)."""
    n = m.shape[0]
    nn = np.full(n, -1, dtype=np.int64)
    dist = np.full(n, np.inf)
    if n < 2:
        return nn, dist

    def work(s):
        blk = _block(m, m, s)
        rows = np.arange(s, min(s + BLOCK, n))
        blk[rows - s, rows] = np.inf
        j = np.argmin(blk, axis=1)
        return s, j, blk[np.arange(len(rows)), j]

    starts = range(0, n, BLOCK)
    if n_jobs is not None and n_jobs > 1 and n > BLOCK:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            parts = list(ex.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    for s, j, d in parts:
        nn[s:s + len(j)] = j
        dist[s:s + len(j)] = d
    return nn, dist


def knn(query_id: int, query: np.ndarray, ids: Sequence[int], vectors: np.ndarray,
        k: int) -> NeighborList:
    """Exact ``k`` nearest candidates by cosine distance.

    The query itself is skipped if present among ``ids``. Ties are broken by
    ascending candidate id. Fewer than ``k`` neighbours come back when the
    pool is smaller.
    """
    if k < 1:
        raise ValueError("k must be positive")
    ids = np.asarray(ids, dtype=np.int64)
    keep = ids != query_id
    ids = ids[keep]
    if ids.size == 0:
        return NeighborList(query_id, (), ())
    vectors = np.asarray(vectors)[keep]
    if vectors.shape[1] != query.shape[0]:
        raise ValueError("incompatible embeddings")
    d = 1.0 - vectors @ query
    order = np.lexsort((ids, d))[:k]
    return NeighborList(query_id, tuple(int(i) for i in ids[order]),
                        tuple(float(x) for x in d[order]))


def ratio_distinctive(d1: float, d2: float, rho: float) -> bool:
    """First/second-NN ratio test: distinctive iff ``d1 / d2 <= rho``.

    ``d2 = inf`` (a lone neighbour) always passes; ``d2 = 0`` passes only
    when ``d1`` is also 0.
    """
    if d1 > d2:
        raise ValueError(f"NN distances out of order: d1={d1} > d2={d2}")
    if d2 == 0:
        return d1 == 0
    if math.isinf(d2):
        return True
    return d1 / d2 <= rho
