#!/usr/bin/env python3
"""Edge reduction from semantic pruning as a function of class composition.

    python3 scripts/pruning_magnitude.py --keep-ratio 0.2

Keeping every same-class edge and a fraction q of the inter-class ones
removes (1 - q) * (1 - s) of all edges, where s is the same-class share.
The script prints the measured reduction for synthetic corridor frames and
for kNN graphs whose labels are progressively shuffled, next to that
prediction.
"""

from __future__ import annotations

import argparse

import numpy as np

from steer3d.geometry import PointCloud
from steer3d.graph import build_knn_graph, graph_stats, prune_inter_class
from steer3d.synthetic import generate_synthetic_sequence, random_scene_spec


def row(tag, g, q, seed):
    st = graph_stats(g)
    pruned = prune_inter_class(g, q, seed)
    s = st.same_class_edges / st.edge_count
    red = 1 - pruned.edge_count / st.edge_count
    print(f"{tag:<24} {st.edge_count:>6} {pruned.edge_count:>6} {s:>8.3f} {red:>9.3f} {(1 - q) * (1 - s):>9.3f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--keep-ratio", type=float, default=0.2)
    ap.add_argument("--k", type=int, default=8)
    ap.add_argument("--points", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    q = args.keep_ratio
    print(f"{'graph':<24} {'edges':>6} {'kept':>6} {'same':>8} {'reduction':>9} {'predicted':>9}")
    seq = generate_synthetic_sequence(random_scene_spec(args.seed, 4, args.points))
    for t, cloud in enumerate(seq.frames):
        row(f"corridor frame {t}", build_knn_graph(cloud, args.k), q, args.seed)
    rng = np.random.default_rng(args.seed)
    pts = rng.uniform(-10, 10, (args.points, 3))
    classes = (pts[:, 0] > 0).astype(int)  # two spatially coherent halves
    for shuffle in (0.0, 0.25, 0.5, 0.75, 1.0):
        c = classes.copy()
        idx = rng.choice(len(c), int(shuffle * len(c)), replace=False)
        c[idx] = rng.integers(0, 2, len(idx))
        row(f"halves, {shuffle:.0%} relabelled", build_knn_graph(PointCloud(pts, c), args.k), q, args.seed)


if __name__ == "__main__":
    main()
