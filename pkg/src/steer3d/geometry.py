"""Point clouds lifted from depth and semantic maps.

Pixel ``(u, v)`` is column ``u`` and row ``v``; grids are row-major with shape
``(height, width)``.  Camera coordinates follow the pinhole convention:
``(X, Y, Z) = depth * K^-1 (u, v, 1)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class EmptyCloudError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class SemanticClass:
    id: int
    label: str


# default table used by the synthetic scenes
ROAD = SemanticClass(0, "road")
WALL = SemanticClass(1, "wall")
OBSTACLE = SemanticClass(2, "obstacle")
DEFAULT_CLASSES = (ROAD, WALL, OBSTACLE)


@dataclass(eq=False)
class PointCloud:
    """Ordered 3D points in meters with optional per-point class ids.

    ``pixels`` holds the ``(u, v)`` source of each point when the cloud came
    from :func:`back_project`; ``source_shape`` is the ``(height, width)`` of
    that depth map.
    """

    points: np.ndarray
    classes: np.ndarray | None = None
    frame_index: int = 0
    timestamp: float = 0.0
    pixels: np.ndarray | None = field(default=None, repr=False)
    source_shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise EmptyCloudError("point cloud has no points")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        if self.classes is not None:
            self.classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
            if len(self.classes) != len(self.points):
                raise ValueError(
                    f"{len(self.classes)} class ids for {len(self.points)} points"
                )
            if np.any(self.classes < 0):
                raise ValueError("class ids must be non-negative")

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, index: np.ndarray) -> "PointCloud":
        index = np.asarray(index, dtype=np.int64)
        return replace(
            self,
            points=self.points[index],
            classes=None if self.classes is None else self.classes[index],
            pixels=None if self.pixels is None else self.pixels[index],
        )


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def validate(self) -> None:
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(vals)) or self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError(f"invalid intrinsics {self}")

    def project(self, points: np.ndarray) -> np.ndarray:
        """Perspective projection of camera-frame points to ``(u, v)`` pixels."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        z = points[:, 2]
        return np.stack(
            [self.fx * points[:, 0] / z + self.cx, self.fy * points[:, 1] / z + self.cy],
            axis=1,
        )


@dataclass(eq=False)
class DepthMap:
    depth: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.ndim != 2:
            raise ValueError("depth must be a 2D grid")
        finite = np.isfinite(self.depth) & (self.depth > 0)
        if self.valid is None:
            self.valid = finite
        else:
            self.valid = np.asarray(self.valid, dtype=bool) & finite

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(eq=False)
class SemanticMap:
    class_id: np.ndarray

    def __post_init__(self):
        self.class_id = np.asarray(self.class_id, dtype=np.int64)
        if self.class_id.ndim != 2:
            raise ValueError("class map must be a 2D grid")

    @property
    def height(self) -> int:
        return self.class_id.shape[0]

    @property
    def width(self) -> int:
        return self.class_id.shape[1]


def back_project(depth: DepthMap, intr: CameraIntrinsics, stride: int = 1) -> PointCloud:
    """Lift every valid strided pixel to camera-frame 3D, in row-major order."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    intr.validate()
    rows = np.arange(0, depth.height, stride)
    cols = np.arange(0, depth.width, stride)
    vv, uu = np.meshgrid(rows, cols, indexing="ij")
    keep = depth.valid[vv, uu]
    u = uu[keep].astype(np.float64)
    v = vv[keep].astype(np.float64)
    if u.size == 0:
        raise EmptyCloudError("no valid depth at the strided pixel locations")
    d = depth.depth[vv, uu][keep]
    # closed form of d * K^-1 (u, v, 1)
    pts = np.stack([d * (u - intr.cx) / intr.fx, d * (v - intr.cy) / intr.fy, d], axis=1)
    pixels = np.stack([uu[keep], vv[keep]], axis=1).astype(np.int64)
    return PointCloud(pts, pixels=pixels, source_shape=(depth.height, depth.width))


def attach_semantics(cloud: PointCloud, sem: SemanticMap, lambda_flag: bool = True) -> PointCloud:
    """Label each point with its source pixel's class (``lambda_flag=False`` strips labels)."""
    if not lambda_flag:
        return replace(cloud, classes=None)
    if cloud.pixels is None or cloud.source_shape is None:
        raise ValueError("cloud carries no pixel provenance")
    if (sem.height, sem.width) != tuple(cloud.source_shape):
        raise ValueError(
            f"semantic map is {sem.height}x{sem.width}, depth was "
            f"{cloud.source_shape[0]}x{cloud.source_shape[1]}"
        )
    labels = sem.class_id[cloud.pixels[:, 1], cloud.pixels[:, 0]]
    return replace(cloud, classes=labels)


def random_downsample(cloud: PointCloud, target_n: int, seed: int = 0) -> PointCloud:
    if target_n < 1:
        raise ValueError("target_n must be >= 1")
    if len(cloud) <= target_n:
        return cloud
    rng = np.random.default_rng(seed)
    return cloud.subset(rng.permutation(len(cloud))[:target_n])


# --- SPDM container ---------------------------------------------------------

SPDM_MAGIC = b"SPDM"
CHANNEL_DEPTH = 1
CHANNEL_CLASS = 2
_HEADER = struct.Struct("<4sIII")


def write_spdm(path: str | Path, grid: np.ndarray, channel: int) -> None:
    grid = np.asarray(grid)
    h, w = grid.shape
    if channel == CHANNEL_DEPTH:
        payload = grid.astype("<f4").tobytes()
    elif channel == CHANNEL_CLASS:
        payload = grid.astype("<u2").tobytes()
    else:
        raise ValueError(f"unknown channel code {channel}")
    Path(path).write_bytes(_HEADER.pack(SPDM_MAGIC, w, h, channel) + payload)


def read_spdm(path: str | Path) -> tuple[np.ndarray, int]:
    """Returns ``(grid, channel)``; depth grids are float32, class grids uint16."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, w, h, channel = _HEADER.unpack_from(data)
    if magic != SPDM_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    dtype = {CHANNEL_DEPTH: "<f4", CHANNEL_CLASS: "<u2"}.get(channel)
    if dtype is None:
        raise ValueError(f"{path}: unknown channel code {channel}")
    expected = _HEADER.size + w * h * np.dtype(dtype).itemsize
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    grid = np.frombuffer(data, dtype=dtype, offset=_HEADER.size).reshape(h, w)
    return grid, channel


def load_depth_map(path: str | Path) -> DepthMap:
    grid, channel = read_spdm(path)
    if channel != CHANNEL_DEPTH:
        raise ValueError(f"{path}: not a depth container")
    return DepthMap(grid.astype(np.float64))


def load_semantic_map(path: str | Path) -> SemanticMap:
    grid, channel = read_spdm(path)
    if channel != CHANNEL_CLASS:
        raise ValueError(f"{path}: not a class container")
    return SemanticMap(grid.astype(np.int64))


# --- CSV ------------------------------------------------------------------------


def cloud_to_csv(cloud: PointCloud) -> str:
    lines = []
    if cloud.classes is None:
        for x, y, z in cloud.points:
            lines.append(f"{float(x)!r},{float(y)!r},{float(z)!r}")
    else:
        for (x, y, z), c in zip(cloud.points, cloud.classes):
            lines.append(f"{float(x)!r},{float(y)!r},{float(z)!r},{int(c)}")
    return "\n".join(lines) + "\n"


def cloud_from_csv(text: str) -> PointCloud:
    rows = [ln.split(",") for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise EmptyCloudError("CSV holds no points")
    widths = {len(r) for r in rows}
    if widths == {3}:
        return PointCloud(np.array(rows, dtype=np.float64))
    if widths == {4}:
        arr = np.array(rows, dtype=np.float64)
        return PointCloud(arr[:, :3], classes=arr[:, 3].astype(np.int64))
    raise ValueError(f"inconsistent CSV column counts {sorted(widths)}")
