"""KITTI raw file formats: velodyne scans, oxts records, calibration, timestamps.

A sequence directory follows the raw-data layout::

    velodyne_points/data/0000000000.bin
    velodyne_points/timestamps.txt
    oxts/data/0000000000.txt
    oxts/timestamps.txt
    labels/0000000000.label        (optional, u16 class id per point)
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, EmptyCloudError, PointCloud
from .vehicle import V_MIN, WHEELBASE, LowSpeedError, steering_from_yaw


class MalformedFileError(ValueError):
    pass


# --- velodyne -------------------------------------------------------------------


def parse_velodyne_bin(data: bytes) -> PointCloud:
    """Four little-endian float32 per point (x, y, z, reflectance); reflectance dropped."""
    if len(data) == 0:
        raise EmptyCloudError("velodyne file is empty")
    if len(data) % 16:
        whole = len(data) - len(data) % 16
        raise MalformedFileError(f"velodyne data has {len(data)} bytes; trailing bytes start at offset {whole}")
    arr = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    return PointCloud(arr[:, :3].astype(np.float64))


def velodyne_bytes(cloud: PointCloud) -> bytes:
    """Inverse of :func:`parse_velodyne_bin` with reflectance written as zero."""
    arr = np.zeros((len(cloud), 4), dtype="<f4")
    arr[:, :3] = cloud.points
    return arr.tobytes()


def label_bytes(classes: np.ndarray) -> bytes:
    return np.asarray(classes, dtype="<u2").tobytes()


def parse_labels(data: bytes, n_points: int) -> np.ndarray:
    labels = np.frombuffer(data, dtype="<u2").astype(np.int64)
    if len(data) % 2 or len(labels) != n_points:
        raise MalformedFileError(f"label file holds {len(data)} bytes for {n_points} points")
    return labels


# --- oxts -----------------------------------------------------------------------

OXTS_FIELDS = (
    "lat lon alt roll pitch yaw vn ve vf vl vu ax ay az af al au "
    "wx wy wz wf wl wu pos_accuracy vel_accuracy navstat numsats posmode velmode orimode"
).split()
VF_INDEX = OXTS_FIELDS.index("vf")
WZ_INDEX = OXTS_FIELDS.index("wz")


@dataclass(frozen=True)
class OxtsRecord:
    values: tuple[float, ...]
    tokens: tuple[str, ...]

    @property
    def forward_velocity(self) -> float:
        return self.values[VF_INDEX]

    @property
    def yaw_rate(self) -> float:
        return self.values[WZ_INDEX]

    def __getitem__(self, name: str) -> float:
        return self.values[OXTS_FIELDS.index(name)]

    def to_line(self) -> str:
        return " ".join(self.tokens)


def parse_oxts(line: str) -> OxtsRecord:
    tokens = tuple(line.split())
    if len(tokens) != len(OXTS_FIELDS):
        raise MalformedFileError(f"oxts line has {len(tokens)} fields, expected {len(OXTS_FIELDS)}")
    values = []
    for i, tok in enumerate(tokens):
        try:
            values.append(float(tok))
        except ValueError:
            raise MalformedFileError(f"oxts field {i} ({OXTS_FIELDS[i]}) is not numeric: {tok!r}") from None
    return OxtsRecord(tuple(values), tokens)


def format_oxts(values) -> str:
    """Serialize 30 numbers as an oxts line (shortest round-tripping repr)."""
    values = list(values)
    if len(values) != len(OXTS_FIELDS):
        raise ValueError(f"need {len(OXTS_FIELDS)} values")
    out = []
    for i, v in enumerate(values):
        if OXTS_FIELDS[i] in ("navstat", "numsats", "posmode", "velmode", "orimode"):
            out.append(str(int(v)))
        else:
            out.append(repr(float(v)))
    return " ".join(out)


def dataformat_indices(text: str) -> dict[str, int]:
    """Field positions as listed in a KITTI ``dataformat.txt``."""
    names = []
    for line in text.splitlines():
        m = re.match(r"\s*([A-Za-z_]+)\s*:", line)
        if m:
            names.append(m.group(1))
    return {n: i for i, n in enumerate(names)}


# --- calibration ----------------------------------------------------------------


def parse_calib(text: str, camera: str = "02") -> CameraIntrinsics:
    """Intrinsics for ``camera`` from ``calib_cam_to_cam.txt`` (P_rect preferred, else K)."""
    entries = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        entries[key.strip()] = rest.split()
    for key, fx_i, fy_i, cx_i, cy_i in ((f"P_rect_{camera}", 0, 5, 2, 6), (f"K_{camera}", 0, 4, 2, 5)):
        if key in entries:
            v = [float(x) for x in entries[key]]
            return CameraIntrinsics(v[fx_i], v[fy_i], v[cx_i], v[cy_i])
    raise KeyError(f"no intrinsics for camera {camera} in calibration text")


# --- timestamps -----------------------------------------------------------------


def parse_timestamp(line: str) -> float:
    """Seconds since midnight from ``YYYY-MM-DD HH:MM:SS.fffffffff``."""
    date_part, _, frac = line.strip().partition(".")
    dt = datetime.strptime(date_part, "%Y-%m-%d %H:%M:%S")
    seconds = dt.hour * 3600 + dt.minute * 60 + dt.second
    return seconds + (float("0." + frac) if frac else 0.0)


def format_timestamp(seconds: float, date: str = "2011-09-26") -> str:
    whole = int(math.floor(seconds))
    nanos = int(round((seconds - whole) * 1e9))
    if nanos == 1_000_000_000:
        whole, nanos = whole + 1, 0
    h, rem = divmod(whole, 3600)
    m, s = divmod(rem, 60)
    return f"{date} {h:02d}:{m:02d}:{s:02d}.{nanos:09d}"


def read_timestamps(path: Path) -> list[float]:
    return [parse_timestamp(ln) for ln in path.read_text().splitlines() if ln.strip()]


# --- sequence loading -----------------------------------------------------------


@dataclass
class FrameRecord:
    frame_index: int
    velodyne_path: Path
    oxts: OxtsRecord
    timestamp: float
    label_path: Path | None = None
    steering: float | None = None
    low_speed: bool = False

    def load_cloud(self) -> PointCloud:
        points = parse_velodyne_bin(self.velodyne_path.read_bytes()).points
        classes = None
        if self.label_path is not None:
            classes = parse_labels(self.label_path.read_bytes(), len(points))
        return PointCloud(points, classes, self.frame_index, self.timestamp)


def _frame_files(directory: Path, suffix: str) -> dict[int, Path]:
    if not directory.is_dir():
        return {}
    return {int(p.stem): p for p in directory.glob(f"*{suffix}") if p.stem.isdigit()}


def load_kitti_sequence(directory: str | Path, L: float = WHEELBASE, v_min: float = V_MIN) -> list[FrameRecord]:
    """Join scans with their oxts record and derive the bicycle-model steering label.

    When oxts and scans are index-synchronized every scan needs its own oxts
    file; otherwise (more oxts records than scans) each scan takes the oxts
    record nearest in time.
    """
    root = Path(directory)
    scans = _frame_files(root / "velodyne_points" / "data", ".bin")
    if not scans:
        raise FileNotFoundError(f"{root}: no velodyne_points/data/*.bin files")
    oxts = _frame_files(root / "oxts" / "data", ".txt")
    labels = _frame_files(root / "labels", ".label")
    scan_ts_path = root / "velodyne_points" / "timestamps.txt"
    oxts_ts_path = root / "oxts" / "timestamps.txt"
    scan_ts = read_timestamps(scan_ts_path) if scan_ts_path.exists() else None
    oxts_ts = read_timestamps(oxts_ts_path) if oxts_ts_path.exists() else None
    by_time = scan_ts is not None and oxts_ts is not None and len(oxts_ts) > len(scan_ts)

    records = []
    for idx in sorted(scans):
        t = scan_ts[idx] if scan_ts is not None and idx < len(scan_ts) else float(idx)
        if by_time:
            o_idx = int(np.argmin(np.abs(np.asarray(oxts_ts) - t)))
        else:
            o_idx = idx
        if o_idx not in oxts:
            raise FileNotFoundError(f"{root}: frame {idx} has no oxts record {o_idx:010d}.txt")
        text = oxts[o_idx].read_text().strip().splitlines()
        if not text:
            raise MalformedFileError(f"{oxts[o_idx]}: empty oxts file")
        rec = parse_oxts(text[0])
        try:
            steering, low = steering_from_yaw(rec.forward_velocity, rec.yaw_rate, L, v_min), False
        except LowSpeedError:
            steering, low = None, True
        records.append(FrameRecord(idx, scans[idx], rec, t, labels.get(idx), steering, low))
    ts = [r.timestamp for r in records]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise MalformedFileError(f"{root}: scan timestamps are not monotone")
    return records
