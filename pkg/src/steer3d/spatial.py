"""Exact nearest-neighbour, radius and farthest-point queries.

Candidate search runs on a scipy kd-tree; every candidate's distance is then
recomputed here with one fixed formula and ranked by ``(distance, index)``, so
answers are exact and tie-stable regardless of tree layout.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .geometry import EmptyCloudError, PointCloud

# widening applied to tree radii before the exact filter
_SLACK = 1e-9


def distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = points - np.asarray(q, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


class SpatialIndex:
    def __init__(self, points: np.ndarray):
        self.points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise EmptyCloudError("cannot index an empty cloud")
        self._tree = cKDTree(self.points, balanced_tree=True, compact_nodes=True)

    @property
    def size(self) -> int:
        return len(self.points)

    def _ranked(self, cand: np.ndarray, q) -> tuple[np.ndarray, np.ndarray]:
        cand = np.asarray(cand, dtype=np.int64)
        d = distances(self.points[cand], q)
        order = np.lexsort((cand, d))
        return cand[order], d[order]

    def knn(self, q, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices and distances of the ``min(k, N)`` nearest points."""
        if k < 1:
            raise ValueError("k must be >= 1")
        k = min(k, self.size)
        if k == self.size:
            return self._ranked(np.arange(self.size), q)
        d_tree, _ = self._tree.query(q, k=k)
        radius = float(np.atleast_1d(d_tree)[-1])
        cand = self._tree.query_ball_point(q, radius * (1 + _SLACK) + 1e-300)
        idx, d = self._ranked(cand, q)
        return idx[:k], d[:k]

    def ball(self, center, r: float, max_count: int | None = None) -> np.ndarray:
        if not r > 0:
            raise ValueError("radius must be positive")
        cand = self._tree.query_ball_point(center, r * (1 + _SLACK))
        idx, d = self._ranked(cand, center)
        idx = idx[d <= r]
        return idx if max_count is None else idx[:max_count]


def build_index(cloud: PointCloud | np.ndarray) -> SpatialIndex:
    points = cloud.points if isinstance(cloud, PointCloud) else cloud
    return SpatialIndex(points)


def knn_query(index: SpatialIndex, q, k: int) -> list[tuple[int, float]]:
    idx, d = index.knn(q, k)
    return [(int(i), float(x)) for i, x in zip(idx, d)]


def ball_query(index: SpatialIndex, center, r: float, max_count: int) -> list[int]:
    if max_count < 1:
        raise ValueError("max_count must be >= 1")
    return [int(i) for i in index.ball(center, r, max_count)]


def farthest_point_sampling(cloud: PointCloud | np.ndarray, m: int, seed_index: int = 0) -> list[int]:
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n = len(points)
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} of {n} points")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed index {seed_index} out of range")
    picks = [seed_index]
    min_d = distances(points, points[seed_index])
    min_d[seed_index] = -np.inf
    for _ in range(m - 1):
        nxt = int(np.argmax(min_d))  # first maximum = smallest index on ties
        picks.append(nxt)
        np.minimum(min_d, distances(points, points[nxt]), out=min_d)
        min_d[nxt] = -np.inf
    return picks
