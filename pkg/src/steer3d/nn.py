"""Spatial encoders, recurrent cells and the composed steering regressor."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .autodiff import Param, Tensor, as_tensor, concat, spmm
from .geometry import PointCloud
from .graph import NormalizedAdjacency, SemanticGraph, node_features
from .spatial import build_index, farthest_point_sampling

ACTIVATIONS = {
    "relu": Tensor.relu,
    "tanh": Tensor.tanh,
    "sigmoid": Tensor.sigmoid,
    "linear": lambda t: t,
}


class ParamStore:
    """Seeded, named parameter factory shared by the layers of one model."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Param] = {}

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int) -> Param:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        bound = 1.0 / math.sqrt(fan_in)
        p = Param(name, self.rng.uniform(-bound, bound, size=shape))
        self.params[name] = p
        return p


class Dense:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, activation: str = "relu"):
        self.weight = store.uniform(f"{name}.weight", (n_in, n_out), n_in)
        self.bias = store.uniform(f"{name}.bias", (1, n_out), n_in)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        return ACTIVATIONS[self.activation](x @ self.weight + self.bias)


class Mlp:
    def __init__(self, store: ParamStore, name: str, n_in: int, widths: Sequence[int],
                 activation: str = "relu", final_activation: str | None = None):
        if not widths:
            raise ValueError("MLP needs at least one layer")
        self.layers = []
        for i, w in enumerate(widths):
            act = activation if i < len(widths) - 1 or final_activation is None else final_activation
            self.layers.append(Dense(store, f"{name}.{i}", n_in, w, act))
            n_in = w
        self.out_dim = n_in

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


# --- graph convolution ---------------------------------------------------------


class GcnLayer:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, activation: str = "relu"):
        self.weight = store.uniform(f"{name}.weight", (n_in, n_out), n_in)
        self.activation = activation

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]


def gcn_forward(layer: GcnLayer, adj: NormalizedAdjacency, features) -> Tensor:
    """``act(A_hat @ H @ W)``."""
    features = as_tensor(features)
    if features.shape[1] != layer.in_dim:
        raise ValueError(f"feature width {features.shape[1]} != layer input {layer.in_dim}")
    if adj.dim != features.shape[0]:
        raise ValueError(f"adjacency is {adj.dim}x{adj.dim} for {features.shape[0]} nodes")
    return ACTIVATIONS[layer.activation](spmm(adj.matrix, features @ layer.weight))


def scale_features(features: np.ndarray, coord_scale: float) -> np.ndarray:
    out = np.array(features, dtype=np.float64, copy=True)
    out[:, :3] /= coord_scale
    return out


class GcnEncoder:
    """Stack of GCN layers followed by a mean over nodes."""

    def __init__(self, store: ParamStore, in_dim: int, widths: Sequence[int], coord_scale: float = 10.0):
        self.layers = []
        for i, w in enumerate(widths):
            self.layers.append(GcnLayer(store, f"encoder.gcn{i}", in_dim, w))
            in_dim = w
        self.out_dim = in_dim
        self.coord_scale = coord_scale
        self.message_ops = 0

    def __call__(self, graph: SemanticGraph) -> Tensor:
        if not isinstance(graph, SemanticGraph):
            raise TypeError("GCN encoder consumes SemanticGraph frames")
        adj = graph.adjacency
        h = Tensor(scale_features(graph.features, self.coord_scale))
        for layer in self.layers:
            h = gcn_forward(layer, adj, h)
            self.message_ops += adj.nnz
        return h.mean(axis=0, keepdims=True)


# --- PointNet++ -------------------------------------------------------------------


@dataclass(frozen=True)
class GroupingPlan:
    centroids: np.ndarray  # (m,)
    groups: np.ndarray  # (m, max_group), padded with each group's nearest member


@dataclass(eq=False)
class PlannedCloud:
    """A cloud with its sampling/grouping indices precomputed for every level."""

    cloud: PointCloud
    plans: list[GroupingPlan]


class SetAbstractionLevel:
    def __init__(self, store: ParamStore, name: str, m: int, radius: float, max_group: int,
                 mlp_widths: Sequence[int], feat_dim: int, coord_scale: float = 10.0):
        if m < 1 or radius <= 0 or max_group < 1:
            raise ValueError("invalid set abstraction level")
        self.m, self.radius, self.max_group = m, radius, max_group
        self.mlp = Mlp(store, f"{name}.mlp", 3 + feat_dim, mlp_widths)
        self.coord_scale = coord_scale
        self.out_dim = self.mlp.out_dim

    def plan(self, positions: np.ndarray, seed_index: int = 0) -> GroupingPlan:
        if self.m > len(positions):
            raise ValueError(f"cannot sample {self.m} centroids from {len(positions)} points")
        centroids = np.array(farthest_point_sampling(positions, self.m, seed_index))
        index = build_index(positions)
        groups = np.empty((self.m, self.max_group), dtype=np.int64)
        for row, c in enumerate(centroids):
            members = index.ball(positions[c], self.radius, self.max_group)
            if len(members) == 0:
                members = np.array([c])
            groups[row, : len(members)] = members
            groups[row, len(members):] = members[0]
        return GroupingPlan(centroids, groups)

    def __call__(self, positions: np.ndarray, features: Tensor, plan: GroupingPlan) -> tuple[np.ndarray, Tensor]:
        m, g = plan.groups.shape
        rel = positions[plan.groups] - positions[plan.centroids][:, None, :]
        rel = Tensor(rel.reshape(m * g, 3) / self.coord_scale)
        member_feats = as_tensor(features).take(plan.groups.reshape(-1))
        h = self.mlp(concat([rel, member_feats], axis=1))
        pooled = h.reshape(m, g, self.out_dim).max(axis=1)
        return positions[plan.centroids], pooled


def set_abstraction(level: SetAbstractionLevel, cloud: PointCloud, features, seed_index: int = 0):
    """One sampling/grouping/aggregation step; returns ``(sampled cloud, features)``."""
    plan = level.plan(cloud.points, seed_index)
    pos, feats = level(cloud.points, as_tensor(features), plan)
    return cloud.subset(plan.centroids), feats


class PointNetPPEncoder:
    """Set abstraction stack followed by a global max-pool."""

    def __init__(self, store: ParamStore, in_dim: int, levels: Sequence[tuple], coord_scale: float = 10.0):
        self.levels = []
        feat = in_dim
        for i, (m, radius, max_group, widths) in enumerate(levels):
            lvl = SetAbstractionLevel(store, f"encoder.sa{i}", m, radius, max_group, widths, feat, coord_scale)
            self.levels.append(lvl)
            feat = lvl.out_dim
        self.out_dim = feat
        self.coord_scale = coord_scale
        self.n_classes = in_dim - 3

    def plan(self, cloud: PointCloud, seed_index: int = 0) -> PlannedCloud:
        plans, pos = [], cloud.points
        for i, lvl in enumerate(self.levels):
            p = lvl.plan(pos, seed_index if i == 0 else 0)
            plans.append(p)
            pos = pos[p.centroids]
        return PlannedCloud(cloud, plans)

    def input_features(self, cloud: PointCloud) -> np.ndarray:
        feats = node_features(cloud, self.n_classes if cloud.classes is not None else None)
        return scale_features(feats, self.coord_scale)

    def __call__(self, frame: PointCloud | PlannedCloud, seed_index: int = 0) -> Tensor:
        if isinstance(frame, PointCloud):
            frame = self.plan(frame, seed_index)
        if not isinstance(frame, PlannedCloud):
            raise TypeError("PointNet++ encoder consumes PointCloud frames")
        pos = frame.cloud.points
        feats: Tensor = Tensor(self.input_features(frame.cloud))
        for lvl, plan in zip(self.levels, frame.plans):
            pos, feats = lvl(pos, feats, plan)
        return feats.max(axis=0, keepdims=True)


# --- recurrent cells -------------------------------------------------------------


class LstmCell:
    def __init__(self, store: ParamStore, in_dim: int, hidden: int):
        self.in_dim, self.hidden_dim = in_dim, hidden
        self.weight = store.uniform("recurrent.lstm.weight", (in_dim + hidden, 4 * hidden), hidden)
        self.bias = store.uniform("recurrent.lstm.bias", (1, 4 * hidden), hidden)
        self.out_dim = hidden

    def initial_state(self) -> tuple[Tensor, Tensor]:
        z = np.zeros((1, self.hidden_dim))
        return Tensor(z), Tensor(z.copy())

    def step(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        h, c = state
        x = as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input width {x.shape[-1]} != {self.in_dim}")
        n = self.hidden_dim
        z = concat([x, h], axis=1) @ self.weight + self.bias
        i = z[:, :n].sigmoid()
        f = z[:, n : 2 * n].sigmoid()
        g = z[:, 2 * n : 3 * n].tanh()
        o = z[:, 3 * n :].sigmoid()
        c_next = f * c + i * g
        return o * c_next.tanh(), c_next

    def output(self, state) -> Tensor:
        return state[0]


def lstm_step(cell: LstmCell, x, state):
    return cell.step(as_tensor(x), state)


class LtcCell:
    """Liquid time-constant neurons integrated by explicit Euler substeps.

    Per substep: ``h += dt / tau * (-h + (mask*W_rec) tanh(h) + W_in x + b)``
    with ``tau = clip(exp(theta x), tau_min, tau_max)``.
    """

    def __init__(self, store: ParamStore, in_dim: int, neurons: int = 19, unfold_steps: int = 6,
                 dt: float = 0.1, tau_min: float = 0.05, tau_max: float = 20.0,
                 sigma_output: bool = True, mask: np.ndarray | None = None):
        if unfold_steps < 1 or dt <= 0:
            raise ValueError("unfold_steps >= 1 and dt > 0 required")
        self.in_dim, self.hidden_dim = in_dim, neurons
        self.w_rec = store.uniform("recurrent.ltc.w_rec", (neurons, neurons), neurons)
        self.w_in = store.uniform("recurrent.ltc.w_in", (neurons, in_dim), in_dim)
        self.bias = store.uniform("recurrent.ltc.bias", (1, neurons), in_dim)
        self.theta = store.uniform("recurrent.ltc.theta", (neurons, in_dim), in_dim)
        self.mask = np.ones((neurons, neurons)) if mask is None else np.asarray(mask, dtype=np.float64)
        if self.mask.shape != (neurons, neurons) or not np.isin(self.mask, (0.0, 1.0)).all():
            raise ValueError("mask must be a binary neurons x neurons array")
        self.unfold_steps, self.dt = unfold_steps, dt
        self.tau_min, self.tau_max = tau_min, tau_max
        self.sigma_output = sigma_output
        self.out_dim = neurons

    def initial_state(self) -> Tensor:
        return Tensor(np.zeros((1, self.hidden_dim)))

    def time_constants(self, x: Tensor) -> Tensor:
        tau = (as_tensor(x) @ self.theta.T).exp().clip(self.tau_min, self.tau_max)
        if not np.all(np.isfinite(tau.value)):
            raise FloatingPointError("non-finite LTC time constant")
        return tau

    def step(self, x, h: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input width {x.shape[-1]} != {self.in_dim}")
        rate = self.dt / self.time_constants(x)
        drive = x @ self.w_in.T + self.bias
        w = self.w_rec * self.mask
        for _ in range(self.unfold_steps):
            h = h + rate * (h.tanh() @ w.T + drive - h)
        return h

    def output(self, h: Tensor) -> Tensor:
        return h.tanh() if self.sigma_output else h


def ltc_step(cell: LtcCell, x, h) -> Tensor:
    return cell.step(as_tensor(x), as_tensor(h))


# --- composed model ---------------------------------------------------------------


@dataclass
class ModelConfig:
    encoder: str = "gcn"
    recurrent: str = "ltc"
    in_features: int = 6
    gcn_widths: tuple = (16, 16)
    sa_levels: tuple = ((64, 2.0, 16, (16, 16)), (16, 5.0, 16, (32, 32)))
    lstm_hidden: int = 16
    ltc_neurons: int = 19
    ltc_unfold_steps: int = 6
    ltc_dt: float = 0.1
    ltc_tau_min: float = 0.05
    ltc_tau_max: float = 20.0
    ltc_sigma_output: bool = True
    ltc_sparsity: float = 0.0
    readout_hidden: int = 32
    coord_scale: float = 10.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "gcn_widths" in d:
            d["gcn_widths"] = tuple(d["gcn_widths"])
        if "sa_levels" in d:
            d["sa_levels"] = tuple((int(m), float(r), int(g), tuple(w)) for m, r, g, w in d["sa_levels"])
        return cls(**d)


def sparsity_mask(neurons: int, sparsity: float, seed: int) -> np.ndarray:
    """Binary recurrent mask with ``floor(sparsity * n^2)`` synapses removed."""
    mask = np.ones(neurons * neurons)
    drop = int(math.floor(sparsity * neurons * neurons))
    if drop:
        rng = np.random.default_rng(seed + 7919)
        mask[rng.permutation(mask.size)[:drop]] = 0.0
    return mask.reshape(neurons, neurons)


class SteeringModel:
    def __init__(self, config: ModelConfig, preset: str = "custom"):
        self.config, self.preset = config, preset
        store = ParamStore(config.seed)
        if config.encoder == "gcn":
            self.encoder = GcnEncoder(store, config.in_features, config.gcn_widths, config.coord_scale)
        elif config.encoder == "pnpp":
            self.encoder = PointNetPPEncoder(store, config.in_features, config.sa_levels, config.coord_scale)
        else:
            raise ValueError(f"unknown encoder {config.encoder!r}")
        emb = self.encoder.out_dim
        if config.recurrent == "lstm":
            self.recurrent = LstmCell(store, emb, config.lstm_hidden)
        elif config.recurrent == "ltc":
            mask = sparsity_mask(config.ltc_neurons, config.ltc_sparsity, config.seed)
            self.recurrent = LtcCell(
                store, emb, config.ltc_neurons, config.ltc_unfold_steps, config.ltc_dt,
                config.ltc_tau_min, config.ltc_tau_max, config.ltc_sigma_output, mask,
            )
        else:
            raise ValueError(f"unknown recurrent cell {config.recurrent!r}")
        self.readout = Mlp(store, "readout", self.recurrent.out_dim,
                           (config.readout_hidden, 1), final_activation="linear")
        self._store = store

    @property
    def params(self) -> list[Param]:
        return list(self._store.params.values())

    def named_params(self) -> dict[str, Param]:
        return dict(self._store.params)

    def encode(self, frame) -> Tensor:
        return self.encoder(frame)

    def forward(self, frames: Sequence) -> Tensor:
        """Steering angle (radians) after consuming ``frames`` oldest-first; shape (1, 1)."""
        if len(frames) == 0:
            raise ValueError("empty frame sequence")
        state = self.recurrent.initial_state()
        for frame in frames:
            state = self.recurrent.step(self.encode(frame), state)
        return self.readout(self.recurrent.output(state))

    def predict(self, frames: Sequence) -> float:
        return float(self.forward(frames).value[0, 0])

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._store.params.items()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        for name, p in self._store.params.items():
            v = np.asarray(values[name], dtype=np.float64)
            if v.shape != p.shape:
                raise ValueError(f"{name}: shape {v.shape} != {p.shape}")
            p.value[...] = v


def model_forward(model: SteeringModel, frames: Sequence) -> Tensor:
    return model.forward(frames)
