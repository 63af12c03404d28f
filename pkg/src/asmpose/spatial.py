"""Exact nearest-neighbor and radius queries in 3-D and descriptor space.

Backed by ``scipy.spatial.cKDTree`` built with median splits and leaf size 16.
Distances handed back are recomputed here with one fixed formula so results
are stable, and ties are broken by ascending stored index.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

LEAF_SIZE = 16


def _distances(data: np.ndarray, q: np.ndarray, idx: np.ndarray) -> np.ndarray:
    diff = data[idx] - q
    return np.sqrt((diff * diff).sum(axis=-1))


class KdTree:
    def __init__(self, vectors, dimension: int | None = None):
        data = np.asarray(vectors, dtype=np.float64)
        if data.size == 0:
            data = data.reshape(0, dimension or 3)
        if data.ndim != 2:
            raise ValueError("vectors must form a 2-D array (count x dimension)")
        if dimension is not None and data.shape[1] != dimension:
            raise ValueError(f"dimension mismatch: expected {dimension}, got {data.shape[1]}")
        if not np.all(np.isfinite(data)):
            raise ValueError("vectors must be finite")
        self.data = np.ascontiguousarray(data)
        self.data.setflags(write=False)
        self.dimension = data.shape[1]
        self._tree = cKDTree(self.data, leafsize=LEAF_SIZE, balanced_tree=True, compact_nodes=True) if len(data) else None

    @property
    def size(self) -> int:
        return len(self.data)

    def __len__(self) -> int:
        return self.size

    def _check(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.shape[-1] != self.dimension:
            raise ValueError(f"query dimension {q.shape[-1]} does not match tree dimension {self.dimension}")
        return q

    def knn(self, query, k: int) -> list[tuple[int, float]]:
        """The ``k`` nearest stored vectors as ``(index, distance)``, ascending."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = self._check(query).reshape(-1)
        if self._tree is None:
            return []
        k_eff = min(k, self.size)
        d, i = self._tree.query(q, k=k_eff)
        kth = float(np.atleast_1d(d)[-1])
        # widen to every vector tied with the k-th distance, then order by (distance, index)
        cand = np.asarray(self._tree.query_ball_point(q, kth * (1 + 1e-12) + 1e-300), dtype=np.int64)
        cand = np.union1d(cand, np.atleast_1d(i))
        dist = _distances(self.data, q, cand)
        order = np.lexsort((cand, dist))[:k_eff]
        return [(int(cand[j]), float(dist[j])) for j in order]

    def radius_search(self, query, radius: float) -> list[tuple[int, float]]:
        """Every stored vector within ``radius`` (inclusive), ascending by distance."""
        if radius <= 0:
            raise ValueError("radius must be positive")
        q = self._check(query).reshape(-1)
        if self._tree is None:
            return []
        cand = np.asarray(self._tree.query_ball_point(q, radius * (1 + 1e-12)), dtype=np.int64)
        dist = _distances(self.data, q, cand)
        keep = dist <= radius
        cand, dist = cand[keep], dist[keep]
        order = np.lexsort((cand, dist))
        return [(int(cand[j]), float(dist[j])) for j in order]

    def query(self, queries, k: int = 1, max_distance: float = np.inf):
        """Batch k-NN: returns ``(indices, distances)`` arrays of shape (m, k).

        Missing neighbors (tree smaller than ``k`` or beyond ``max_distance``)
        get index ``size`` and distance ``inf``.
        """
        q = self._check(queries).reshape(-1, self.dimension)
        m = len(q)
        if self._tree is None or m == 0:
            return np.full((m, k), self.size, dtype=np.int64), np.full((m, k), np.inf)
        d, i = self._tree.query(q, k=k, distance_upper_bound=max_distance)
        d = np.asarray(d).reshape(m, k)
        i = np.asarray(i, dtype=np.int64).reshape(m, k)
        valid = i < self.size
        safe = np.where(valid, i, 0)
        dist = np.where(valid, _distances(self.data, q[:, None, :], safe), np.inf)
        # beyond-bound neighbors stay excluded after recomputation
        dist = np.where(dist <= max_distance, dist, np.inf)
        i = np.where(np.isfinite(dist), i, self.size)
        if k > 1:
            order = np.lexsort((i, dist), axis=-1)
            i = np.take_along_axis(i, order, axis=1)
            dist = np.take_along_axis(dist, order, axis=1)
        return i, dist

