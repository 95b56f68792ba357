"""Acceptance criteria, one test per criterion.

Every test records a ``[PASS]`` or ``[FAIL]`` line that is printed in the
terminal summary under "acceptance criteria".  The oracles here are written
independently of the library code: brute-force numpy distance matrices,
dense linear algebra and closed-form geometry.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, FIXTURES
from steer3d.autodiff import Param, Tape, finite_difference_gradient, relative_error
from steer3d.cli import _prepared, main
from steer3d.checkpoint import load_checkpoint
from steer3d.dataset import load_split
from steer3d.geometry import PointCloud
from steer3d.graph import SemanticGraph, build_knn_graph, prune_inter_class
from steer3d.kitti import OXTS_FIELDS, dataformat_indices, parse_oxts, parse_velodyne_bin, velodyne_bytes
from steer3d.nn import (
    GcnLayer,
    LstmCell,
    LtcCell,
    ModelConfig,
    ParamStore,
    SetAbstractionLevel,
    SteeringModel,
    gcn_forward,
    sparsity_mask,
)
from steer3d.presets import get_preset
from steer3d.spatial import ball_query, build_index, farthest_point_sampling, knn_query
from steer3d.training import evaluate
from steer3d.vehicle import EgoState, integrate_path_kinematic, integrate_path_paper, steering_from_yaw, yaw_from_steering


def record(cid, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {cid}: {detail}")
    return ok


# --- 1. spatial queries against brute force -----------------------------------------


def _dmat(p, q):
    diff = p[:, None, :] - q[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _ranked(d):
    return np.lexsort((np.arange(len(d)), d))


def _brute_fps(p, m, seed):
    full = _dmat(p, p)
    picks = [seed]
    for _ in range(m - 1):
        nearest = full[:, picks].min(axis=1)
        nearest[picks] = -1.0
        picks.append(int(np.argmax(nearest)))  # argmax returns the lowest index among ties
    return picks


def _cloud(rng, i):
    n = int(rng.integers(1, 501))
    if i % 4 == 0:  # integer lattice: many exact distance ties
        return rng.integers(-3, 4, (n, 3)).astype(np.float64)
    pts = rng.normal(0, 5, (n, 3))
    if i % 4 == 1 and n > 1:  # duplicated points
        pts[rng.integers(0, n, n // 3)] = pts[0]
    return pts


def test_c1_spatial_oracles():
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    mismatches = 0
    for i in range(200):
        pts = _cloud(rng, i)
        n = len(pts)
        idx = build_index(pts)
        queries = np.vstack([pts[rng.integers(0, n, 3)], rng.normal(0, 5, (3, 3))])
        d = _dmat(queries, pts)
        for qi, q in enumerate(queries):
            order = _ranked(d[qi])
            k = int(rng.integers(1, n + 2))
            mismatches += [j for j, _ in knn_query(idx, q, k)] != order[:k].tolist()
            # the last choice puts the boundary exactly on a data point
            r = float(rng.choice([0.5, 2.0, 6.0, max(np.sort(d[qi])[min(n - 1, 5)], 0.25)]))
            cap = int(rng.integers(1, 40))
            mismatches += ball_query(idx, q, r, cap) != [j for j in order if d[qi, j] <= r][:cap]
        m = int(rng.integers(1, min(n, 64) + 1))
        seed = int(rng.integers(0, n))
        mismatches += farthest_point_sampling(pts, m, seed) != _brute_fps(pts, m, seed)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 30
    record("C1 spatial oracles", ok, f"200 clouds, {mismatches} mismatches, {elapsed:.1f}s (limit 30s)")
    assert ok


# --- 2. gradient correctness ----------------------------------------------------------


def _worst(loss_fn, params):
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    numeric = finite_difference_gradient(lambda: float(loss_fn().value.sum()), params, step=1e-5)
    return max(float(relative_error(a, b).max()) for a, b in zip(analytic, numeric))


def _gcn_case(seed):
    rng = np.random.default_rng(seed)
    layer = GcnLayer(ParamStore(seed), "g", 4, 3, "tanh")
    x = Param("x", rng.normal(size=(10, 4)))
    g = build_knn_graph(PointCloud(rng.normal(size=(10, 3)), rng.integers(0, 3, 10)), k=3, n_classes=3)
    return lambda: gcn_forward(layer, g.adjacency, x).square().sum(), [layer.weight, x]


def _sa_case(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, (30, 3))
    lvl = SetAbstractionLevel(ParamStore(seed), "sa", 6, 0.8, 5, (4, 3), 2, coord_scale=1.0)
    feats = Param("feats", rng.normal(size=(30, 2)))
    plan = lvl.plan(pts, int(rng.integers(0, 30)))
    params = [lvl.mlp.layers[0].weight, lvl.mlp.layers[1].weight, lvl.mlp.layers[1].bias, feats]
    return lambda: lvl(pts, feats, plan)[1].square().sum(), params


def _lstm_case(seed):
    rng = np.random.default_rng(seed)
    cell = LstmCell(ParamStore(seed), 3, 4)
    xs = [Param(f"x{t}", rng.normal(size=(1, 3))) for t in range(3)]

    def loss():
        state = cell.initial_state()
        for x in xs:
            state = cell.step(x, state)
        return state[0].square().sum()

    return loss, [cell.weight, cell.bias, *xs]


def _ltc_case(seed):
    rng = np.random.default_rng(seed)
    cell = LtcCell(ParamStore(seed), 3, neurons=5, mask=sparsity_mask(5, 0.3, seed))
    xs = [Param(f"x{t}", rng.normal(size=(1, 3))) for t in range(3)]

    def loss():
        h = cell.initial_state()
        for x in xs:
            h = cell.step(x, h)
        return cell.output(h).square().sum()

    return loss, [cell.w_rec, cell.w_in, cell.bias, cell.theta, *xs]


def _gnn_ltc_case(seed):
    rng = np.random.default_rng(seed)
    model = SteeringModel(ModelConfig(encoder="gcn", recurrent="ltc", gcn_widths=(8, 8), ltc_neurons=7,
                                      readout_hidden=8, seed=seed))
    frames = [build_knn_graph(PointCloud(rng.uniform(-3, 3, (10, 3)), rng.integers(0, 3, 10)), k=3, n_classes=3)
              for _ in range(2)]
    return lambda: (model.forward(frames) - 0.1).square().sum(), model.params


@pytest.mark.parametrize("name,case", [
    ("GCN layer", _gcn_case), ("set abstraction", _sa_case), ("LSTM", _lstm_case),
    ("LTC", _ltc_case), ("GNN-LTC model, 10 nodes", _gnn_ltc_case),
])
def test_c2_gradients(name, case):
    errs = [_worst(*case(1000 + s)) for s in range(20)]
    ok = max(errs) <= 1e-4
    record(f"C2 gradients {name}", ok, f"20 instances, worst relative error {max(errs):.2e} (limit 1e-4)")
    assert ok


# --- 3. pruning ------------------------------------------------------------------------


def test_c3_pruning_exact():
    rng = np.random.default_rng(7)
    bad = 0
    for t in range(100):
        n = int(rng.integers(5, 150))
        g = build_knn_graph(PointCloud(rng.normal(size=(n, 3)), rng.integers(0, int(rng.integers(2, 5)), n)),
                            k=int(rng.integers(1, 9)))
        same = {tuple(e) for e in g.edges[g.same_class_mask()].tolist()}
        m_inter = g.edge_count - len(same)
        p = prune_inter_class(g, 0.2, seed=t)
        kept = {tuple(e) for e in p.edges.tolist()}
        kept_inter = kept - same
        all_inter = {tuple(e) for e in g.edges.tolist()} - same
        bad += len(kept_inter) != m_inter * 2 // 10
        bad += not same <= kept or not kept_inter <= all_inter
        bad += not np.array_equal(p.edges, prune_inter_class(g, 0.2, seed=t).edges)
    ok = bad == 0
    record("C3 pruning exactness", ok, f"100 random mixed-class graphs, {bad} violations")
    assert ok


def _anchor_graph(n_same, n_inter, seed):
    """A graph with the requested class composition, classes alternating on a ring of pairs."""
    rng = np.random.default_rng(seed)
    n = 80
    classes = np.arange(n) % 2
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    same = [p for p in pairs if classes[p[0]] == classes[p[1]]]
    inter = [p for p in pairs if classes[p[0]] != classes[p[1]]]
    pick = lambda pool, k: [pool[i] for i in rng.choice(len(pool), k, replace=False)]  # noqa: E731
    edges = sorted(pick(same, n_same) + pick(inter, n_inter))
    return SemanticGraph(np.zeros((n, 3)), np.zeros((n, 1)), edges, classes=classes)


def test_c3_magnitude_anchor():
    # 600 -> 296 with keep 0.2 means 220 same-class and 380 inter-class edges
    g = prune_inter_class(_anchor_graph(220, 380, 0), 0.2, seed=0)
    reduction = 1 - g.edge_count / 600
    ok = g.edge_count == 296 and 0.45 <= reduction <= 0.55
    record("C3 anchor 600->296", ok, f"600 edges (36.7% same-class) -> {g.edge_count}, reduction {reduction:.1%}")
    assert ok


@pytest.mark.xfail(strict=True, reason="keeping 20% of inter-class edges removes 0.8*(1-s); s=0.5 gives 40%")
def test_c3_band_at_half_same_class():
    g = _anchor_graph(300, 300, 1)
    reduction = 1 - prune_inter_class(g, 0.2, seed=0).edge_count / 600
    ok = 0.45 <= reduction <= 0.55
    record("C3 band at 50% same-class", ok,
           f"reduction {reduction:.1%}, band 45-55% unreachable: 0.8*(1-0.5) = 40% (known defect, see README)")
    assert ok


# --- 4. normalized adjacency ----------------------------------------------------------


def test_c4_normalized_adjacency():
    rng = np.random.default_rng(4)
    worst, asym = 0.0, 0.0
    for t in range(40):
        n = int(rng.integers(1, 201))
        g = build_knn_graph(PointCloud(rng.normal(size=(n, 3))), k=int(rng.integers(1, 12)))
        a = g.adjacency.matrix.toarray()
        asym = max(asym, float(np.abs(a - a.T).max()))
        worst = max(worst, float(np.abs(np.linalg.eigvalsh((a + a.T) / 2)).max()))
    ok = asym == 0.0 and worst <= 1 + 1e-9
    record("C4 normalized adjacency", ok, f"40 graphs up to 200 nodes, max asymmetry {asym}, spectral radius {worst:.12f}")
    assert ok


# --- 5. bicycle model -----------------------------------------------------------------


def test_c5_bicycle():
    err0 = abs(steering_from_yaw(10.0, 0.5) - math.atan(0.135))
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(2000):
        theta, v, L = rng.uniform(-1.2, 1.2), rng.uniform(0.5, 40), rng.uniform(1.0, 5.0)
        worst = max(worst, abs(steering_from_yaw(v, yaw_from_steering(theta, v, L), L) - theta))
    ok = err0 <= 1e-12 and worst <= 1e-12
    record("C5 bicycle model", ok, f"|theta(10, 0.5) - atan(0.135)| = {err0:.1e}, roundtrip worst {worst:.1e}")
    assert ok


# --- 6. trajectory kinematics ----------------------------------------------------------


def test_c6_trajectories():
    origin = EgoState(0.0, 0.0, 0.0, 0.0, 0.0)
    closing = []
    for theta, v in [(0.05, 10.0), (0.2, 5.0), (-0.4, 3.0)]:
        radius = 2.7 / math.tan(abs(theta))
        period = 2 * math.pi * radius / v
        xy = integrate_path_kinematic([theta] * 100, [v] * 100, 0.01 * period, origin).xy()
        closing.append(np.linalg.norm(xy[-1] - xy[0]) / radius)
    rng = np.random.default_rng(6)
    angles, vels = rng.uniform(-1.5, 1.5, 200), rng.uniform(0, 30, 200)
    steps = np.linalg.norm(np.diff(integrate_path_paper(angles, vels, 0.1, origin).xy(), axis=0), axis=1)
    step_err = float(np.abs(steps - vels * 0.1).max())
    ok = max(closing) < 0.01 and step_err <= 1e-12
    record("C6 trajectories", ok, f"circle closing error {max(closing):.1e} of radius, paper step error {step_err:.1e}")
    assert ok


# --- 7. permutation invariance ---------------------------------------------------------


def test_c7_permutation_invariance():
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        cloud = PointCloud(rng.uniform(-3, 3, (40, 3)), rng.integers(0, 3, 40))
        perm = rng.permutation(40)
        shuffled = cloud.subset(perm)
        for encoder in ("gcn", "pnpp"):
            model = SteeringModel(ModelConfig(encoder=encoder, recurrent="ltc", gcn_widths=(8, 8),
                                              sa_levels=((8, 2.0, 6, (8,)), (3, 5.0, 4, (8,))), seed=seed))
            if encoder == "gcn":
                a = model.encode(build_knn_graph(cloud, k=4, n_classes=3)).value
                b = model.encode(build_knn_graph(shuffled, k=4, n_classes=3)).value
            else:
                a = model.encode(model.encoder.plan(cloud, 0)).value
                b = model.encode(model.encoder.plan(shuffled, int(np.flatnonzero(perm == 0)[0]))).value
            worst = max(worst, float(np.abs(a - b).max()))
    ok = worst <= 1e-9
    record("C7 permutation invariance", ok, f"gcn and pnpp encoders, 10 clouds, worst deviation {worst:.1e}")
    assert ok


# --- 8 and 9. desk-scale learning ------------------------------------------------------


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    """Synthesize the default corridor set and train three presets through the CLI."""
    root = tmp_path_factory.mktemp("desk")
    assert main(["synth", "--out", str(root / "data")]) == 0
    runs = {}
    for preset in ("gnn-lstm", "gnn-ncp", "sa-gnn-ncp"):
        out = root / preset
        t0 = time.perf_counter()
        assert main(["train", "--preset", preset, "--data", str(root / "data" / "manifest.txt"), "--out", str(out)]) == 0
        elapsed = time.perf_counter() - t0
        assert main(["eval", "--checkpoint", str(out / "model.ckpt"), "--data", str(root / "data" / "manifest.txt"),
                     "--out", str(out)]) == 0
        head, row = (out / "eval_test_summary.csv").read_text().splitlines()
        summary = dict(zip(head.split(","), row.split(",")))
        runs[preset] = dict(out=out, seconds=elapsed, mse=float(summary["mse"]),
                            base=float(summary["mean_predictor_mse"]), ratio=float(summary["ratio"]),
                            epochs=len((out / "history.csv").read_text().splitlines()) - 1)
    return root, runs


@pytest.mark.slow
@pytest.mark.parametrize("preset", ["gnn-lstm", "gnn-ncp"])
def test_c8_desk_learning(desk, preset, tmp_path):
    root, runs = desk
    r = runs[preset]
    # rerun from scratch with the same seed and compare the loss history byte for byte
    assert main(["train", "--preset", preset, "--data", str(root / "data" / "manifest.txt"), "--out", str(tmp_path)]) == 0
    same = (tmp_path / "history.csv").read_bytes() == (r["out"] / "history.csv").read_bytes()
    ok = r["ratio"] <= 0.5 and r["epochs"] <= 200 and r["seconds"] < 900 and same
    record(f"C8 desk learning {preset}", ok,
           f"test mse {r['mse']:.5f} vs mean predictor {r['base']:.5f} (ratio {r['ratio']:.2f}, limit 0.5), "
           f"{r['epochs']} epochs in {r['seconds']:.0f}s, history reproducible: {same}")
    assert ok


def _ops_per_forward(run, data):
    model, _, _ = load_checkpoint(run / "model.ckpt")
    preset = get_preset(model.preset)
    frames = _prepared(load_split(data)["test"], preset, model, 2)
    model.encoder.message_ops = 0
    report = evaluate(model, frames, 4)
    return model.encoder.message_ops / len(report.residuals)


@pytest.mark.slow
def test_c9_pruned_vs_unpruned(desk):
    root, runs = desk
    pruned, full = runs["sa-gnn-ncp"], runs["gnn-ncp"]
    data = root / "data" / "manifest.txt"
    ops_pruned, ops_full = _ops_per_forward(pruned["out"], data), _ops_per_forward(full["out"], data)
    ok = pruned["mse"] <= 1.1 * full["mse"] and ops_pruned < ops_full
    record("C9 pruned vs unpruned", ok,
           f"sa-gnn-ncp mse {pruned['mse']:.5f} vs gnn-ncp {full['mse']:.5f} (limit +10%), "
           f"message ops per forward {ops_pruned:.0f} vs {ops_full:.0f}")
    assert ok


# --- 10. format fidelity --------------------------------------------------------------


def test_c10_format_fidelity():
    seq = FIXTURES / "seq_three"
    bins = sorted((seq / "velodyne_points" / "data").glob("*.bin"))
    oxts = sorted((seq / "oxts" / "data").glob("*.txt"))
    bin_ok = all(velodyne_bytes(parse_velodyne_bin(p.read_bytes())) == p.read_bytes() for p in bins)
    oxts_ok = all(parse_oxts(p.read_text().strip()).to_line() + "\n" == p.read_text() for p in oxts)
    refl = (FIXTURES / "reflectance.bin").read_bytes()
    lossy = velodyne_bytes(parse_velodyne_bin(refl)) != refl
    idx = dataformat_indices((FIXTURES / "oxts_dataformat.txt").read_text())
    idx_ok = list(idx) == list(OXTS_FIELDS) and idx["vf"] == 8 and idx["wz"] == 19
    ok = bin_ok and oxts_ok and lossy and idx_ok
    record("C10 format fidelity", ok,
           f"{len(bins)} velodyne and {len(oxts)} oxts fixtures byte-exact, reflectance lossy: {lossy}, "
           f"oxts indices match dataformat: {idx_ok}")
    assert ok


# --- 11. documented non-reproducibility -----------------------------------------------


def test_c11_documentation():
    readme = (FIXTURES.parents[1] / "README.md").read_text()
    needles = ["0.267", "0.077", "71%", "not acceptance targets", "C8", "C9"]
    missing = [n for n in needles if n not in readme]
    ok = not missing
    record("C11 documented non-reproducibility", ok, f"README statement present, missing phrases: {missing or 'none'}")
    assert ok
