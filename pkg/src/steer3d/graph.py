"""kNN graphs over point clouds, semantic-aware pruning and GCN normalization."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .geometry import PointCloud
from .spatial import build_index


@dataclass(frozen=True)
class NormalizedAdjacency:
    """``D^-1/2 (A + I) D^-1/2`` as a CSR matrix."""

    matrix: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(eq=False)
class SemanticGraph:
    positions: np.ndarray
    features: np.ndarray
    edges: np.ndarray  # (E, 2) int64, i < j, lexicographically sorted
    classes: np.ndarray | None = None
    point_index: np.ndarray | None = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.positions)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.point_index is None:
            self.point_index = np.arange(n)
        if len(self.edges):
            i, j = self.edges[:, 0], self.edges[:, 1]
            if np.any(i >= j) or np.any(i < 0) or np.any(j >= n):
                raise ValueError("edges must satisfy 0 <= i < j < node count")
            if len(np.unique(i * n + j)) != len(self.edges):
                raise ValueError("duplicate edges")

    @property
    def node_count(self) -> int:
        return len(self.positions)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency without self-loops."""
        n = self.node_count
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        return sp.csr_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(n, n))

    @cached_property
    def adjacency(self) -> NormalizedAdjacency:
        return normalize_adjacency(self)

    def same_class_mask(self) -> np.ndarray:
        if self.classes is None:
            raise ValueError("graph nodes carry no class ids")
        return self.classes[self.edges[:, 0]] == self.classes[self.edges[:, 1]]


def node_features(cloud: PointCloud, n_classes: int | None = None) -> np.ndarray:
    """Coordinates, followed by a one-hot class block when classes exist."""
    if cloud.classes is None:
        return cloud.points.copy()
    width = int(cloud.classes.max()) + 1 if n_classes is None else n_classes
    if cloud.classes.max() >= width:
        raise ValueError(f"class id {cloud.classes.max()} needs more than {width} one-hot slots")
    onehot = np.zeros((len(cloud), width))
    onehot[np.arange(len(cloud)), cloud.classes] = 1.0
    return np.hstack([cloud.points, onehot])


def _canonical(pairs: np.ndarray, n: int) -> np.ndarray:
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keys = np.unique(lo * n + hi)
    return np.stack([keys // n, keys % n], axis=1)


def build_knn_graph(cloud: PointCloud, k: int = 8, n_classes: int | None = None) -> SemanticGraph:
    """Union-symmetrized kNN graph (edge kept if either endpoint picked the other)."""
    n = len(cloud)
    if n < 2:
        raise ValueError("need at least two points to build a graph")
    if k < 1:
        raise ValueError("k must be >= 1")
    flags = {}
    if k >= n:
        flags["all_pairs"] = True
        i, j = np.triu_indices(n, 1)
        edges = np.stack([i, j], axis=1)
    else:
        index = build_index(cloud)
        src, dst = [], []
        for a in range(n):
            nbrs, _ = index.knn(cloud.points[a], k + 1)
            nbrs = nbrs[nbrs != a][:k]
            src.append(np.full(len(nbrs), a))
            dst.append(nbrs)
        edges = _canonical(np.stack([np.concatenate(src), np.concatenate(dst)], axis=1), n)
    return SemanticGraph(
        positions=cloud.points,
        features=node_features(cloud, n_classes),
        edges=edges,
        classes=cloud.classes,
        flags=flags,
    )


def retained_count(keep_ratio: float, m: int) -> int:
    """``floor(keep_ratio * m)`` evaluated on the decimal value of ``keep_ratio``."""
    return math.floor(Fraction(repr(float(keep_ratio))) * m)


def prune_inter_class(graph: SemanticGraph, keep_ratio: float = 0.2, seed: int = 0) -> SemanticGraph:
    """Keep every same-class edge and a seeded random ``keep_ratio`` share of the rest."""
    if not 0.0 <= keep_ratio <= 1.0:
        raise ValueError("keep_ratio must lie in [0, 1]")
    same = graph.same_class_mask()
    inter = graph.edges[~same]
    n_keep = retained_count(keep_ratio, len(inter))
    rng = np.random.default_rng(seed)
    chosen = inter[rng.permutation(len(inter))[:n_keep]]
    kept = np.concatenate([graph.edges[same], chosen])
    kept = _canonical(kept, graph.node_count) if len(kept) else kept
    flags = dict(graph.flags, pruned_keep_ratio=keep_ratio, prune_scope="global")
    return SemanticGraph(
        positions=graph.positions,
        features=graph.features,
        edges=kept,
        classes=graph.classes,
        point_index=graph.point_index,
        flags=flags,
    )


def normalize_adjacency(graph: SemanticGraph) -> NormalizedAdjacency:
    n = graph.node_count
    if n == 0:
        raise ValueError("empty graph")
    a_tilde = (graph.csr + sp.identity(n, format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    return NormalizedAdjacency((d @ a_tilde @ d).tocsr())


@dataclass
class GraphStats:
    node_count: int
    edge_count: int
    class_pair_counts: dict
    mean_degree: float
    same_class_edges: int | None = None
    inter_class_edges: int | None = None


def graph_stats(graph: SemanticGraph) -> GraphStats:
    n, e = graph.node_count, graph.edge_count
    pairs: dict = {}
    same = inter = None
    if graph.classes is not None:
        ci = graph.classes[graph.edges[:, 0]]
        cj = graph.classes[graph.edges[:, 1]]
        lo, hi = np.minimum(ci, cj), np.maximum(ci, cj)
        pairs = dict(sorted(Counter(zip(lo.tolist(), hi.tolist())).items()))
        same = int(np.sum(ci == cj))
        inter = e - same
    return GraphStats(
        node_count=n,
        edge_count=e,
        class_pair_counts=pairs,
        mean_degree=2.0 * e / n if n else 0.0,
        same_class_edges=same,
        inter_class_edges=inter,
    )


def to_dot(graph: SemanticGraph, name: str = "G") -> str:
    lines = [f"graph {name} {{"]
    for node in range(graph.node_count):
        label = "" if graph.classes is None else str(int(graph.classes[node]))
        lines.append(f'  {node} [label="{label}"];')
    for i, j in graph.edges:
        lines.append(f"  {i} -- {j};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def edges_to_csv(graph: SemanticGraph) -> str:
    same = (
        graph.same_class_mask()
        if graph.classes is not None
        else np.zeros(graph.edge_count, dtype=bool)
    )
    rows = ["i,j,same_class"]
    rows += [f"{i},{j},{int(s)}" for (i, j), s in zip(graph.edges, same)]
    return "\n".join(rows) + "\n"
