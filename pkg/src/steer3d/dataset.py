"""Train/val/test splits, dataset manifests and model-ready frame preparation.

A manifest is plain text, one sequence per line::

    # split  directory (relative to the manifest)
    train seq_00
    val   seq_12
    test  seq_14
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import random_downsample
from .graph import build_knn_graph, prune_inter_class
from .kitti import format_oxts, format_timestamp, OXTS_FIELDS, label_bytes, load_kitti_sequence, velodyne_bytes
from .nn import PointNetPPEncoder, SteeringModel
from .presets import Preset
from .synthetic import SyntheticSequence
from .training import DriveSequence

SPLITS = ("train", "val", "test")
PAPER_SPLIT = (12, 2, 1)


class SplitError(ValueError):
    pass


@dataclass
class DatasetSplit:
    train: list[str] = field(default_factory=list)
    val: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)

    def items(self):
        for name in SPLITS:
            yield name, getattr(self, name)


def split_dataset(sequences: Sequence[str], assignment: dict[str, Iterable[str]]) -> DatasetSplit:
    known = set(sequences)
    unknown = set(assignment) - set(SPLITS)
    if unknown:
        raise SplitError(f"unknown split names {sorted(unknown)}")
    parts = {name: list(assignment.get(name, ())) for name in SPLITS}
    seen: dict[str, str] = {}
    for name, members in parts.items():
        if not members:
            raise SplitError(f"{name} split is empty")
        for seq in members:
            if seq not in known:
                raise SplitError(f"sequence {seq!r} not in the dataset")
            if seq in seen:
                raise SplitError(f"sequence {seq!r} assigned to both {seen[seq]} and {name}")
            seen[seq] = name
    return DatasetSplit(**parts)


def ratio_assignment(sequences: Sequence[str], counts: tuple[int, int, int] = PAPER_SPLIT) -> dict[str, list[str]]:
    """First ``counts[0]`` sequences train, next ``counts[1]`` val, next ``counts[2]`` test."""
    if sum(counts) > len(sequences):
        raise SplitError(f"{len(sequences)} sequences cannot fill a {counts} split")
    a, b, c = counts
    seqs = list(sequences)
    return {"train": seqs[:a], "val": seqs[a : a + b], "test": seqs[a + b : a + b + c]}


def write_manifest(path: str | Path, split: DatasetSplit) -> None:
    lines = ["# split directory"]
    for name, members in split.items():
        lines += [f"{name} {m}" for m in members]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> DatasetSplit:
    parts: dict[str, list[str]] = {name: [] for name in SPLITS}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 2 or fields[0] not in parts:
            raise SplitError(f"{path}:{n}: expected '<train|val|test> <directory>'")
        parts[fields[0]].append(fields[1])
    names = [s for members in parts.values() for s in members]
    return split_dataset(names, parts)


def write_sequence(directory: str | Path, seq: SyntheticSequence, start_time: float = 0.0) -> None:
    """Store a synthetic drive in the KITTI raw layout (plus per-point labels)."""
    root = Path(directory)
    vel, oxt, lab = root / "velodyne_points" / "data", root / "oxts" / "data", root / "labels"
    for d in (vel, oxt, lab):
        d.mkdir(parents=True, exist_ok=True)
    stamps = []
    for t, cloud in enumerate(seq.frames):
        stem = f"{t:010d}"
        (vel / f"{stem}.bin").write_bytes(velodyne_bytes(cloud))
        (lab / f"{stem}.label").write_bytes(label_bytes(cloud.classes))
        values = [0.0] * len(OXTS_FIELDS)
        values[OXTS_FIELDS.index("vf")] = float(seq.velocities[t])
        values[OXTS_FIELDS.index("wz")] = float(seq.velocities[t] * seq.curvature[t])
        (oxt / f"{stem}.txt").write_text(format_oxts(values) + "\n")
        stamps.append(format_timestamp(start_time + t * seq.dt))
    text = "\n".join(stamps) + "\n"
    (root / "velodyne_points" / "timestamps.txt").write_text(text)
    (root / "oxts" / "timestamps.txt").write_text(text)


@dataclass
class RawSequence:
    """Clouds and labels of one sequence before model-specific preprocessing."""

    name: str
    clouds: list
    truth: np.ndarray
    valid: np.ndarray
    velocities: np.ndarray
    timestamps: np.ndarray


def load_raw_sequence(directory: str | Path, name: str | None = None) -> RawSequence:
    records = load_kitti_sequence(directory)
    clouds = [r.load_cloud() for r in records]
    truth = np.array([0.0 if r.steering is None else r.steering for r in records])
    valid = np.array([not r.low_speed for r in records])
    return RawSequence(
        name=name or Path(directory).name,
        clouds=clouds,
        truth=truth,
        valid=valid,
        velocities=np.array([r.oxts.forward_velocity for r in records]),
        timestamps=np.array([r.timestamp for r in records]),
    )


def load_split(manifest: str | Path) -> dict[str, list[RawSequence]]:
    manifest = Path(manifest)
    split = read_manifest(manifest)
    return {
        name: [load_raw_sequence(manifest.parent / d, d) for d in members]
        for name, members in split.items()
    }


def prepare_frame(cloud, preset: Preset, model: SteeringModel | None = None, seed: int = 0):
    """Downsample and convert one cloud into what the preset's encoder consumes."""
    cloud = random_downsample(cloud, preset.points_per_frame, seed)
    if preset.uses_graph:
        if cloud.classes is None:
            raise ValueError(f"frame {cloud.frame_index} has no class labels; graph presets need labels/*.label")
        graph = build_knn_graph(cloud, preset.k, n_classes=preset.model.in_features - 3)
        if preset.keep_ratio < 1.0:
            graph = prune_inter_class(graph, preset.keep_ratio, seed)
        return graph
    encoder = model.encoder if model is not None else None
    if not isinstance(encoder, PointNetPPEncoder):
        raise ValueError("PointNet++ presets need the model to plan groupings")
    return encoder.plan(cloud)


def prepare_sequence(raw: RawSequence, preset: Preset, model: SteeringModel | None = None, seed: int = 0) -> DriveSequence:
    frames = [
        prepare_frame(c, preset, model, seed + 7919 * i)
        for i, c in enumerate(raw.clouds)
    ]
    return DriveSequence(raw.name, frames, raw.truth, raw.valid)
