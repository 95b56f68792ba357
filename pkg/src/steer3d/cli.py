"""``steer3d`` command line: synth, build-graph, train, eval, path, gradcheck.

Every command takes ``--config FILE`` (``key=value`` lines), ``--preset``,
``--seed``, ``--out`` and one ``--flag`` per config key.  Values resolve as
defaults < config file < flags, and the effective set is written to
``<out>/run_manifest.txt`` in the same ``key=value`` format, so a manifest can
be fed back through ``--config`` to repeat the run.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .autodiff import Tape, finite_difference_gradient, relative_error
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import (
    load_raw_sequence,
    load_split,
    prepare_sequence,
    ratio_assignment,
    read_manifest,
    split_dataset,
    write_manifest,
    write_sequence,
)
from .geometry import PointCloud, cloud_from_csv, random_downsample
from .graph import build_knn_graph, edges_to_csv, graph_stats, prune_inter_class, to_dot
from .kitti import parse_labels, parse_velodyne_bin
from .plots import Series, line_plot
from .presets import PRESETS, build_model, get_preset
from .synthetic import generate_synthetic_sequence, random_scene_spec
from .training import DriveSequence, TrainConfig, TrainingError, evaluate, mean_predictor_mse, train, window_frames
from .vehicle import EgoState, integrate_path_kinematic, integrate_path_paper, reset_at_waypoints

log = logging.getLogger("steer3d")

COMMON = {"preset": "gnn-ncp", "seed": 0, "out": "out"}

KEYS: dict[str, dict] = {
    "synth": {
        "n_sequences": 15, "split": "12,2,1", "n_frames": 24, "points_per_frame": 256,
        "knot_every": 8, "max_curvature": 0.1, "corridor_width": 8.0, "noise_sigma": 0.05,
        "view_ahead": 15.0, "dt": 0.1,
    },
    "build-graph": {"frame": "", "labels": "", "k": 8, "keep_ratio": 0.2, "points": 0},
    "train": {
        "data": "", "learning_rate": 1e-3, "max_epochs": 200, "patience": 20, "horizon": 4,
        "weight_alpha": 0.0, "points_per_frame": 256, "resume": "",
    },
    "eval": {"checkpoint": "", "data": "", "split": "test", "horizon": 4},
    "path": {
        "checkpoint": "", "data": "", "sequence": "", "waypoints": "", "horizon": 4,
        "source": "model", "dt": 0.0,
    },
    "gradcheck": {"checkpoint": "", "nodes": 10, "frames": 2, "step": 1e-5, "tol": 1e-4},
}


class UsageError(ValueError):
    pass


# --- configuration ----------------------------------------------------------------


def _coerce(key: str, raw, default):
    if raw is None:
        return default
    if isinstance(default, bool):
        s = str(raw).strip().lower()
        if s not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"{key}: expected a boolean, got {raw!r}")
        return s in ("true", "1", "yes")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"{key}: expected {type(default).__name__}, got {raw!r}") from None
    return str(raw)


def read_config_file(path: str | Path) -> dict[str, str]:
    values = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, _, val = line.partition("=")
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def resolve(command: str, file_values: dict, flag_values: dict) -> dict:
    """Merge defaults, config-file values and flags; unknown keys are errors."""
    defaults = {**COMMON, **KEYS[command]}
    unknown = sorted(set(file_values) - set(defaults))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    out = {}
    for key, default in defaults.items():
        raw = flag_values.get(key)
        if raw is None:
            raw = file_values.get(key)
        out[key] = _coerce(key, raw, default)
    return out


def write_run_manifest(command: str, cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# steer3d {command}"] + [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in cfg.items()]
    path = out / "run_manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


# --- helpers --------------------------------------------------------------------


def _require(cfg: dict, *keys: str) -> None:
    for k in keys:
        if not cfg[k]:
            raise UsageError(f"--{k.replace('_', '-')} is required")


def load_frame(path: str | Path, labels: str | Path = "") -> PointCloud:
    """A velodyne ``.bin`` (labels from ``labels/`` beside it when present) or a cloud CSV."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"frame file not found: {path}")
    if path.suffix == ".csv":
        return cloud_from_csv(path.read_text())
    cloud = parse_velodyne_bin(path.read_bytes())
    label_path = Path(labels) if labels else path.parent.parent.parent / "labels" / f"{path.stem}.label"
    if label_path.is_file():
        return PointCloud(cloud.points, parse_labels(label_path.read_bytes(), len(cloud)))
    if labels:
        raise FileNotFoundError(f"label file not found: {label_path}")
    return cloud


def _prepared(raws, preset, model, seed):
    return [prepare_sequence(r, preset, model, seed + 104729 * j) for j, r in enumerate(raws)]


def _preset_for(cfg: dict, points_per_frame: int | None = None):
    preset = get_preset(cfg["preset"])
    if points_per_frame:
        preset = replace(preset, points_per_frame=points_per_frame)
    return preset


# --- commands -------------------------------------------------------------------


def cmd_synth(cfg: dict) -> None:
    counts = tuple(int(x) for x in cfg["split"].split(","))
    if len(counts) != 3:
        raise UsageError("split must be three comma-separated counts")
    out = Path(cfg["out"])
    names = []
    for i in range(cfg["n_sequences"]):
        spec = random_scene_spec(cfg["seed"] * 1000 + i, cfg["n_frames"], cfg["points_per_frame"],
                                 cfg["knot_every"], cfg["max_curvature"])
        spec = replace(spec, corridor_width=cfg["corridor_width"], noise_sigma=cfg["noise_sigma"],
                       view_ahead=cfg["view_ahead"], dt=cfg["dt"])
        name = f"seq_{i:02d}"
        write_sequence(out / name, generate_synthetic_sequence(spec))
        names.append(name)
    write_manifest(out / "manifest.txt", split_dataset(names, ratio_assignment(names, counts)))
    log.info("wrote %d sequences to %s", len(names), out)


def cmd_build_graph(cfg: dict) -> None:
    _require(cfg, "frame")
    cloud = load_frame(cfg["frame"], cfg["labels"])
    if cfg["points"] > 0:
        cloud = random_downsample(cloud, cfg["points"], cfg["seed"])
    n_classes = int(cloud.classes.max()) + 1 if cloud.classes is not None else None
    pre = build_knn_graph(cloud, cfg["k"], n_classes=n_classes)
    post = prune_inter_class(pre, cfg["keep_ratio"], cfg["seed"]) if cloud.classes is not None else pre
    out = Path(cfg["out"])
    (out / "graph_pre.dot").write_text(to_dot(pre))
    (out / "graph_post.dot").write_text(to_dot(post))
    (out / "edges_post.csv").write_text(edges_to_csv(post))
    rows = ["stage,nodes,edges,same_class,inter_class,mean_degree"]
    for stage, g in (("pre", pre), ("post", post)):
        s = graph_stats(g)
        rows.append(f"{stage},{s.node_count},{s.edge_count},{s.same_class_edges},{s.inter_class_edges},{s.mean_degree!r}")
    (out / "graph_stats.csv").write_text("\n".join(rows) + "\n")


def cmd_train(cfg: dict) -> None:
    _require(cfg, "data")
    tcfg = TrainConfig(
        learning_rate=cfg["learning_rate"], max_epochs=cfg["max_epochs"], patience=cfg["patience"],
        horizon=cfg["horizon"], weight_alpha=cfg["weight_alpha"], seed=cfg["seed"],
        points_per_frame=cfg["points_per_frame"],
    )
    preset = _preset_for(cfg, cfg["points_per_frame"])
    opt, start = None, 0
    if cfg["resume"]:
        model, opt, meta = load_checkpoint(cfg["resume"])
        if model.preset != preset.name:
            raise UsageError(f"checkpoint holds preset {model.preset}, not {preset.name}")
        start = int(meta.get("next_epoch", 0))
    else:
        model = build_model(preset, cfg["seed"])
    splits = load_split(cfg["data"])
    train_set = _prepared(splits["train"], preset, model, cfg["seed"])
    val_set = _prepared(splits["val"], preset, model, cfg["seed"] + 1)
    model, hist, opt = train(model, train_set, val_set, tcfg, opt, start, restore_best=False)
    out = Path(cfg["out"])
    meta = {"next_epoch": start + len(hist.epochs), "seed": cfg["seed"], "best_epoch": hist.best_epoch,
            "best_val_mse": hist.best_val}
    save_checkpoint(out / "last.ckpt", model, opt, meta)
    model.restore(hist.best_params)
    save_checkpoint(out / "model.ckpt", model, opt, meta)
    (out / "history.csv").write_text(hist.to_csv())
    log.info("best epoch %d, val mse %.6g", hist.best_epoch, hist.best_val)


def _eval_plot(report, split: str) -> str:
    idx = np.arange(len(report.truth), dtype=np.float64)
    return line_plot(
        [Series("truth", np.stack([idx, report.truth], 1)),
         Series("prediction", np.stack([idx, report.predictions], 1)),
         Series("residual", np.stack([idx, report.residuals], 1), dashed=True)],
        title=f"steering on {split} (mse {report.mse:.4g} rad^2)", xlabel="frame", ylabel="radians",
    )


def cmd_eval(cfg: dict) -> None:
    _require(cfg, "checkpoint", "data")
    model, _, meta = load_checkpoint(cfg["checkpoint"])
    preset = get_preset(model.preset)
    splits = load_split(cfg["data"])
    if cfg["split"] not in splits:
        raise UsageError(f"unknown split {cfg['split']!r}")
    data = _prepared(splits[cfg["split"]], preset, model, cfg["seed"] + 2)
    report = evaluate(model, data, cfg["horizon"], cfg["split"])
    out = Path(cfg["out"])
    (out / f"eval_{cfg['split']}.csv").write_text(report.to_csv())
    (out / f"residuals_{cfg['split']}.svg").write_text(_eval_plot(report, cfg["split"]))
    baseline = mean_predictor_mse(_labels_only(splits["train"]), _labels_only(splits[cfg["split"]]))
    (out / f"eval_{cfg['split']}_summary.csv").write_text(
        "split,frames,mse,mean_predictor_mse,ratio\n"
        f"{cfg['split']},{len(report.residuals)},{report.mse!r},{baseline!r},{report.mse / baseline!r}\n"
    )
    log.info("%s mse %.6g (mean predictor %.6g)", cfg["split"], report.mse, baseline)


def _labels_only(raws):
    return [DriveSequence(r.name, [None] * len(r.truth), r.truth, r.valid) for r in raws]


def _parse_waypoints(text: str, n: int) -> list[int]:
    text = text.strip()
    if not text:
        return []
    if text.startswith("every:"):
        step = int(text.split(":", 1)[1])
        if step < 1:
            raise UsageError("waypoint spacing must be >= 1")
        return list(range(0, n, step))
    return sorted(int(x) for x in text.split(","))


def cmd_path(cfg: dict) -> None:
    _require(cfg, "data")
    manifest = Path(cfg["data"])
    split = read_manifest(manifest)
    name = cfg["sequence"] or split.test[0]
    raw = load_raw_sequence(manifest.parent / name, name)
    n = len(raw.truth)
    if cfg["source"] == "model":
        _require(cfg, "checkpoint")
        model, _, _ = load_checkpoint(cfg["checkpoint"])
        seq = _prepared([raw], get_preset(model.preset), model, cfg["seed"] + 3)[0]
        angles = np.array([model.predict(window_frames(seq, t, cfg["horizon"])) for t in range(n)])
    elif cfg["source"] == "truth":
        angles = raw.truth.copy()
    elif cfg["source"] == "zero":
        angles = np.zeros(n)
    else:
        raise UsageError(f"source must be model, truth or zero, not {cfg['source']!r}")
    dt = cfg["dt"] or (float(np.median(np.diff(raw.timestamps))) if n > 1 else 0.1)
    start = EgoState(0.0, 0.0, 0.0, float(raw.velocities[0]), 0.0)
    waypoints = _parse_waypoints(cfg["waypoints"], n + 1)
    out = Path(cfg["out"])
    series = []
    for mode, integ in (("paper", integrate_path_paper), ("kinematic", integrate_path_kinematic)):
        truth = integ(raw.truth, raw.velocities, dt, start)
        pred = reset_at_waypoints(integ(angles, raw.velocities, dt, start), truth, waypoints)
        (out / f"path_{mode}.csv").write_text(pred.to_csv())
        (out / f"truth_{mode}.csv").write_text(truth.to_csv())
        series += [Series(f"truth ({mode})", truth.xy(), dashed=True), Series(f"{cfg['source']} ({mode})", pred.xy())]
    (out / "path.svg").write_text(line_plot(series, title=f"dead reckoning: {name}", xlabel="x (m)",
                                            ylabel="y (m)", equal_aspect=True))


def _component(name: str) -> str:
    return name.split(".", 1)[0]


def gradcheck_report(model, frames, step: float, tol: float) -> tuple[list[str], bool]:
    """Rows ``component,worst_parameter,index,max_rel_error,status`` and overall pass flag."""
    params = model.named_params()
    bad = [n for n, p in params.items() if not np.all(np.isfinite(p.value))]
    rows = ["component,worst_parameter,index,max_rel_error,status"]
    if bad:
        for n in bad:
            rows.append(f"{_component(n)},{n},,nan,non-finite")
        return rows, False
    plist = list(params.values())
    for p in plist:
        p.zero_grad()

    def loss_fn():
        return (model.forward(frames) - 0.1).square().sum()

    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss, check_finite=plist)
    analytic = {n: p.grad.copy() for n, p in params.items()}
    numeric = dict(zip(params, finite_difference_gradient(lambda: float(loss_fn().value), plist, step)))
    worst: dict[str, tuple[float, str, int]] = {}
    for n in params:
        err = relative_error(analytic[n], numeric[n])
        i = int(np.argmax(err))
        c = _component(n)
        if c not in worst or err.flat[i] > worst[c][0]:
            worst[c] = (float(err.flat[i]), n, i)
    ok = True
    for c, (e, n, i) in worst.items():
        status = "pass" if e <= tol else "fail"
        ok &= status == "pass"
        rows.append(f"{c},{n},{i},{e!r},{status}")
    return rows, ok


def _gradcheck_frames(model, preset, nodes: int, n_frames: int, seed: int):
    n = nodes
    if not preset.uses_graph:
        n = max(nodes, model.encoder.levels[0].m)
    rng = np.random.default_rng(seed)
    frames = []
    for _ in range(n_frames):
        cloud = PointCloud(rng.uniform(-5, 5, (n, 3)), rng.integers(0, 3, n))
        if preset.uses_graph:
            g = build_knn_graph(cloud, min(preset.k, n - 1), n_classes=3)
            frames.append(prune_inter_class(g, preset.keep_ratio, seed) if preset.keep_ratio < 1 else g)
        else:
            frames.append(model.encoder.plan(cloud))
    return frames


def cmd_gradcheck(cfg: dict) -> int:
    if cfg["checkpoint"]:
        model, _, _ = load_checkpoint(cfg["checkpoint"])
        preset = get_preset(model.preset)
    else:
        preset = get_preset(cfg["preset"])
        model = build_model(preset, cfg["seed"])
    frames = _gradcheck_frames(model, preset, cfg["nodes"], cfg["frames"], cfg["seed"])
    rows, ok = gradcheck_report(model, frames, cfg["step"], cfg["tol"])
    (Path(cfg["out"]) / "gradcheck.csv").write_text("\n".join(rows) + "\n")
    for row in rows[1:]:
        if not row.endswith(",pass"):
            print(f"steer3d gradcheck: failed: {row}", file=sys.stderr)
    return 0 if ok else 1


COMMANDS = {
    "synth": cmd_synth,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "eval": cmd_eval,
    "path": cmd_path,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="steer3d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value file; flags override it")
        p.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))}")
        p.add_argument("--seed")
        p.add_argument("--out")
        for key in KEYS[name]:
            p.add_argument("--" + key.replace("_", "-"), dest=key)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve(args.command, file_values, flags)
        get_preset(cfg["preset"])
        write_run_manifest(args.command, cfg)
        status = COMMANDS[args.command](cfg)
    except (ValueError, KeyError, OSError, FloatingPointError, TrainingError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"steer3d {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
