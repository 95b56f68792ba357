import hashlib
import math

import numpy as np
import pytest

from steer3d.checkpoint import load_checkpoint, save_checkpoint
from steer3d.cli import main, read_config_file, resolve
from steer3d.geometry import PointCloud, cloud_to_csv

SMALL = ["--n-frames", "6", "--points-per-frame", "64"]


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "run_manifest.txt":
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--n-sequences", "4", "--split", "2,1,1", *SMALL]) == 0
    assert main(["train", "--data", str(root / "data" / "manifest.txt"), "--preset", "gnn-lstm",
                 "--max-epochs", "3", "--points-per-frame", "64", "--out", str(root / "run")]) == 0
    return root


def test_synth_default_split(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "a"), *SMALL]) == 0
    lines = [ln.split() for ln in (tmp_path / "a" / "manifest.txt").read_text().splitlines() if not ln.startswith("#")]
    assert len(lines) == 15
    assert [sum(1 for s, _ in lines if s == name) for name in ("train", "val", "test")] == [12, 2, 1]


def test_synth_reproducible_and_seeded(tmp_path):
    args = ["synth", "--n-sequences", "3", "--split", "1,1,1", *SMALL]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    main(args + ["--out", str(tmp_path / "c"), "--seed", "5"])
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")
    assert (tmp_path / "a" / "manifest.txt").read_text() == (tmp_path / "c" / "manifest.txt").read_text()


def _stats(path):
    rows = [ln.split(",") for ln in path.read_text().splitlines()[1:]]
    return {r[0]: dict(nodes=int(r[1]), edges=int(r[2]), same=int(r[3]), inter=int(r[4])) for r in rows}


def test_build_graph_counts(workspace, tmp_path):
    frame = workspace / "data" / "seq_00" / "velodyne_points" / "data" / "0000000000.bin"
    assert main(["build-graph", "--frame", str(frame), "--keep-ratio", "1", "--out", str(tmp_path / "full")]) == 0
    s = _stats(tmp_path / "full" / "graph_stats.csv")
    assert s["pre"] == s["post"]
    assert main(["build-graph", "--frame", str(frame), "--keep-ratio", "0.2", "--out", str(tmp_path / "cut")]) == 0
    s = _stats(tmp_path / "cut" / "graph_stats.csv")
    assert s["post"]["edges"] == s["pre"]["same"] + math.floor(0.2 * s["pre"]["inter"])
    edges = (tmp_path / "cut" / "edges_post.csv").read_text().splitlines()[1:]
    assert len(edges) == s["post"]["edges"]
    assert (tmp_path / "cut" / "graph_post.dot").read_text().startswith("graph G {")


def test_build_graph_single_class(tmp_path):
    rng = np.random.default_rng(0)
    frame = tmp_path / "frame.csv"
    frame.write_text(cloud_to_csv(PointCloud(rng.normal(size=(40, 3)), np.ones(40, int))))
    assert main(["build-graph", "--frame", str(frame), "--keep-ratio", "0.1", "--out", str(tmp_path / "o")]) == 0
    s = _stats(tmp_path / "o" / "graph_stats.csv")
    assert s["pre"]["edges"] == s["post"]["edges"]


def test_build_graph_unreadable(tmp_path, capsys):
    assert main(["build-graph", "--frame", str(tmp_path / "nope.bin"), "--out", str(tmp_path)]) == 1
    assert "not found" in capsys.readouterr().err


def test_config_precedence_and_manifest(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# comment\nk = 5\nkeep_ratio=0.5\n")
    merged = resolve("build-graph", read_config_file(cfg), {"k": "3"})
    assert merged["k"] == 3 and merged["keep_ratio"] == 0.5 and merged["points"] == 0
    cfg.write_text("bogus=1\n")
    with pytest.raises(ValueError, match="bogus"):
        resolve("build-graph", read_config_file(cfg), {})
    assert main(["build-graph", "--config", str(cfg), "--frame", "x", "--out", str(tmp_path / "o")]) == 1


def test_manifest_replays_run(workspace, tmp_path):
    frame = workspace / "data" / "seq_01" / "velodyne_points" / "data" / "0000000002.bin"
    main(["build-graph", "--frame", str(frame), "--k", "5", "--seed", "3", "--out", str(tmp_path / "a")])
    text = (tmp_path / "a" / "run_manifest.txt").read_text()
    assert "k=5" in text and "seed=3" in text
    main(["build-graph", "--config", str(tmp_path / "a" / "run_manifest.txt"), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "graph_post.dot").read_text() == (tmp_path / "b" / "graph_post.dot").read_text()


def test_train_outputs(workspace):
    run = workspace / "run"
    hist = [ln.split(",") for ln in (run / "history.csv").read_text().splitlines()]
    assert hist[0] == ["epoch", "train_mse", "val_mse"] and len(hist) == 4
    model, opt, meta = load_checkpoint(run / "model.ckpt")
    vals = [float(r[2]) for r in hist[1:]]
    assert meta["best_val_mse"] == min(vals) and meta["best_epoch"] == int(np.argmin(vals))
    assert opt is not None and opt.step > 0


def test_train_resume_continues(workspace, tmp_path):
    data = str(workspace / "data" / "manifest.txt")
    assert main(["train", "--data", data, "--preset", "gnn-lstm", "--max-epochs", "1", "--points-per-frame", "64",
                 "--resume", str(workspace / "run" / "last.ckpt"), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "history.csv").read_text().splitlines()[1].startswith("3,")
    _, opt, _ = load_checkpoint(tmp_path / "r" / "last.ckpt")
    _, before, _ = load_checkpoint(workspace / "run" / "last.ckpt")
    assert opt.step > before.step


def test_train_bad_preset(tmp_path, capsys):
    assert main(["train", "--preset", "gnn-xyz", "--data", "m.txt", "--out", str(tmp_path)]) == 1
    assert "valid presets: gnn-lstm, gnn-ncp" in capsys.readouterr().err


def test_eval(workspace, tmp_path):
    ckpt, data = str(workspace / "run" / "model.ckpt"), str(workspace / "data" / "manifest.txt")
    assert main(["eval", "--checkpoint", ckpt, "--data", data, "--split", "train", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "eval_train.csv").read_text().splitlines()
    assert len(rows) - 1 == 2 * 6
    svg = (tmp_path / "residuals_train.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<polyline") == 3
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", data, "--out", str(tmp_path)]) == 1


def _xy(path):
    return np.array([[float(v) for v in ln.split(",")[1:3]] for ln in path.read_text().splitlines()[1:]])


def test_path_zero_steering_is_straight(workspace, tmp_path):
    data = str(workspace / "data" / "manifest.txt")
    assert main(["path", "--data", data, "--source", "zero", "--out", str(tmp_path)]) == 0
    xy = _xy(tmp_path / "path_paper.csv")
    assert not xy[:, 1].any() and np.all(np.diff(xy[:, 0]) > 0)
    assert "<polyline" in (tmp_path / "path.svg").read_text()


def test_path_resets_and_modes(workspace, tmp_path):
    ckpt, data = str(workspace / "run" / "model.ckpt"), str(workspace / "data" / "manifest.txt")
    assert main(["path", "--checkpoint", ckpt, "--data", data, "--waypoints", "2,4", "--out", str(tmp_path)]) == 0
    for mode in ("paper", "kinematic"):
        pred, truth = _xy(tmp_path / f"path_{mode}.csv"), _xy(tmp_path / f"truth_{mode}.csv")
        assert np.array_equal(pred[[2, 4]], truth[[2, 4]])
    assert (tmp_path / "path_paper.csv").read_text() != (tmp_path / "path_kinematic.csv").read_text()


def test_gradcheck_pass_and_nan(workspace, tmp_path, capsys):
    assert main(["gradcheck", "--preset", "gnn-ncp", "--out", str(tmp_path / "ok")]) == 0
    rows = (tmp_path / "ok" / "gradcheck.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["encoder", "recurrent", "readout"]
    assert all(r.endswith(",pass") and float(r.split(",")[3]) <= 1e-4 for r in rows[1:])
    model, opt, meta = load_checkpoint(workspace / "run" / "model.ckpt")
    model.named_params()["encoder.gcn1.weight"].value[2, 1] = np.nan
    save_checkpoint(tmp_path / "nan.ckpt", model, opt, meta)
    assert main(["gradcheck", "--checkpoint", str(tmp_path / "nan.ckpt"), "--out", str(tmp_path / "bad")]) == 1
    assert "encoder.gcn1.weight" in capsys.readouterr().err
