#!/usr/bin/env python3
"""Train presets on the synthetic corridor set and compare against the mean predictor.

    python3 scripts/desk_learning.py --presets gnn-lstm gnn-ncp sa-gnn-ncp --out runs/desk

Writes one row per preset to <out>/desk_learning.csv and the loss curves to
<out>/<preset>_history.svg.
"""

from __future__ import annotations

import argparse
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from steer3d.dataset import RawSequence, prepare_sequence
from steer3d.plots import Series, line_plot
from steer3d.presets import PRESETS, build_model, get_preset
from steer3d.synthetic import generate_synthetic_sequence, random_scene_spec
from steer3d.training import TrainConfig, evaluate, mean_predictor_mse, train


def synth(n, seed, n_frames, points, view_ahead, knot_every):
    out = []
    for i in range(n):
        spec = replace(random_scene_spec(seed * 1000 + i, n_frames, points, knot_every), view_ahead=view_ahead)
        s = generate_synthetic_sequence(spec)
        out.append(RawSequence(f"seq_{i:02d}", s.frames, s.truth, s.valid, s.velocities,
                               np.arange(n_frames) * spec.dt))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--presets", nargs="+", default=["gnn-lstm", "gnn-ncp", "sa-gnn-ncp"], choices=sorted(PRESETS))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--patience", type=int, default=20)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--frames", type=int, default=24)
    ap.add_argument("--points", type=int, default=256)
    ap.add_argument("--view-ahead", type=float, default=15.0)
    ap.add_argument("--knot-every", type=int, default=8)
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    raws = synth(15, args.seed, args.frames, args.points, args.view_ahead, args.knot_every)
    tr_raw, va_raw, te_raw = raws[:12], raws[12:14], raws[14:]
    rows = ["preset,epochs,best_epoch,seconds,test_mse,mean_predictor_mse,ratio,message_ops_per_forward"]
    for name in args.presets:
        preset = replace(get_preset(name), points_per_frame=args.points)
        model = build_model(preset, args.seed)
        tr, va, te = ([prepare_sequence(r, preset, model, args.seed + 104729 * j + off) for j, r in enumerate(rs)]
                      for off, rs in enumerate((tr_raw, va_raw, te_raw)))
        cfg = TrainConfig(learning_rate=args.lr, max_epochs=args.epochs, patience=args.patience, seed=args.seed)
        t0 = time.perf_counter()
        model, hist, _ = train(model, tr, va, cfg)
        seconds = time.perf_counter() - t0
        ops_before = getattr(model.encoder, "message_ops", 0)
        report = evaluate(model, te, cfg.horizon, "test")
        ops = (getattr(model.encoder, "message_ops", 0) - ops_before) / len(report.residuals)
        base = mean_predictor_mse(tr, te)
        rows.append(f"{name},{len(hist.epochs)},{hist.best_epoch},{seconds:.1f},{report.mse:.6g},{base:.6g},"
                    f"{report.mse / base:.4f},{ops:.0f}")
        print(rows[-1], flush=True)
        ep = np.asarray(hist.epochs, dtype=np.float64)
        svg = line_plot([Series("train", np.stack([ep, hist.train_mse], 1)),
                         Series("val", np.stack([ep, hist.val_mse], 1))],
                        title=f"{name} loss", xlabel="epoch", ylabel="mse (rad^2)")
        (args.out / f"{name}_history.svg").write_text(svg)
    (args.out / "desk_learning.csv").write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
