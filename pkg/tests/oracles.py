"""Brute-force reference implementations used by the tests."""

import numpy as np


def dist(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.einsum("i,i->", d, d)))


def brute_knn(points, q, k):
    ranked = sorted(range(len(points)), key=lambda j: (dist(points[j], q), j))
    return ranked[: min(k, len(points))]


def brute_ball(points, c, r, max_count):
    inside = [j for j in range(len(points)) if dist(points[j], c) <= r]
    return sorted(inside, key=lambda j: (dist(points[j], c), j))[:max_count]


def brute_fps(points, m, seed):
    picks = [seed]
    while len(picks) < m:
        best, best_d = None, -1.0
        for j in range(len(points)):
            if j in picks:
                continue
            d = min(dist(points[j], points[p]) for p in picks)
            if d > best_d:
                best, best_d = j, d
        picks.append(best)
    return picks


def brute_knn_edges(points, k):
    edges = set()
    for a in range(len(points)):
        others = sorted((j for j in range(len(points)) if j != a), key=lambda j: (dist(points[a], points[j]), j))
        for b in others[:k]:
            edges.add((min(a, b), max(a, b)))
    return sorted(edges)


def dense_normalized(n, edges):
    a = np.eye(n)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))
