"""Seeded corridor scenes standing in for KITTI drives at desk scale.

The ego vehicle follows the centreline of a corridor whose curvature varies
along the drive.  Each frame samples road, wall and obstacle points in ego
coordinates (x forward, y left, z up); the steering label comes from the
bicycle model with yaw rate ``v * curvature``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud
from .vehicle import V_MIN, WHEELBASE, LowSpeedError, steering_from_yaw


@dataclass(frozen=True)
class SyntheticSceneSpec:
    curvature_schedule: tuple = ((0, 0.0),)  # (frame, curvature 1/m) knots, linear in between
    velocity_profile: tuple = ((0, 8.0),)  # (frame, m/s) knots
    n_frames: int = 24
    dt: float = 0.1
    corridor_width: float = 8.0
    points_per_frame: int = 256
    noise_sigma: float = 0.05
    road_class: int = 0
    wall_class: int = 1
    obstacle_class: int = 2
    wall_height: float = 2.0
    view_ahead: float = 15.0
    view_behind: float = 2.0
    obstacle_count: int = 3
    obstacle_radius: float = 0.5
    obstacle_height: float = 1.5
    wheelbase: float = WHEELBASE
    seed: int = 0

    def validate(self) -> None:
        positive = {
            "n_frames": self.n_frames, "dt": self.dt, "corridor_width": self.corridor_width,
            "points_per_frame": self.points_per_frame, "wall_height": self.wall_height,
            "view_ahead": self.view_ahead, "wheelbase": self.wheelbase,
        }
        for name, v in positive.items():
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.noise_sigma < 0 or self.obstacle_count < 0 or self.view_behind < 0:
            raise ValueError("noise_sigma, obstacle_count and view_behind must be non-negative")
        if not self.curvature_schedule or not self.velocity_profile:
            raise ValueError("schedules need at least one knot")
        if len({self.road_class, self.wall_class, self.obstacle_class}) != 3:
            raise ValueError("class ids must be distinct")


@dataclass
class SyntheticSequence:
    frames: list[PointCloud]
    truth: np.ndarray
    velocities: np.ndarray
    curvature: np.ndarray
    dt: float
    valid: np.ndarray = field(default=None)


def _knots(schedule, n: int) -> np.ndarray:
    pts = sorted((float(f), float(v)) for f, v in schedule)
    xs, ys = zip(*pts)
    return np.interp(np.arange(n, dtype=np.float64), xs, ys)


class _Centerline:
    def __init__(self, s_frames: np.ndarray, kappa_frames: np.ndarray, s_lo: float, s_hi: float, ds: float = 0.05):
        self.s = np.arange(s_lo, s_hi + ds, ds)
        kappa = np.interp(self.s, s_frames, kappa_frames)
        psi = np.concatenate([[0.0], np.cumsum(0.5 * (kappa[1:] + kappa[:-1]) * ds)])
        x = np.concatenate([[0.0], np.cumsum(0.5 * (np.cos(psi[1:]) + np.cos(psi[:-1])) * ds)])
        y = np.concatenate([[0.0], np.cumsum(0.5 * (np.sin(psi[1:]) + np.sin(psi[:-1])) * ds)])
        # re-anchor so arc length 0 sits at the origin with heading 0
        x0, y0, p0 = (np.interp(0.0, self.s, a) for a in (x, y, psi))
        c, sn = np.cos(-p0), np.sin(-p0)
        self.x = c * (x - x0) - sn * (y - y0)
        self.y = sn * (x - x0) + c * (y - y0)
        self.psi = psi - p0

    def at(self, s: np.ndarray):
        return (np.interp(s, self.s, self.x), np.interp(s, self.s, self.y), np.interp(s, self.s, self.psi))


def generate_synthetic_sequence(spec: SyntheticSceneSpec) -> SyntheticSequence:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_frames
    kappa = _knots(spec.curvature_schedule, n)
    v = _knots(spec.velocity_profile, n)
    s_frames = np.concatenate([[0.0], np.cumsum(v[:-1] * spec.dt)])
    line = _Centerline(s_frames, kappa, -spec.view_behind - 1.0, s_frames[-1] + spec.view_ahead + 1.0)

    truth = np.zeros(n)
    valid = np.ones(n, dtype=bool)
    for t in range(n):
        try:
            truth[t] = steering_from_yaw(v[t], v[t] * kappa[t], spec.wheelbase, V_MIN)
        except LowSpeedError:
            valid[t] = False

    half = spec.corridor_width / 2
    obs_s = rng.uniform(0.0, s_frames[-1] + spec.view_ahead, spec.obstacle_count)
    obs_u = rng.choice([-1.0, 1.0], spec.obstacle_count) * rng.uniform(0.2, 0.45, spec.obstacle_count) * spec.corridor_width
    ox, oy, opsi = line.at(obs_s)
    obs_xy = np.stack([ox - np.sin(opsi) * obs_u, oy + np.cos(opsi) * obs_u], axis=1)

    frames = []
    npts = spec.points_per_frame
    for t in range(n):
        lo, hi = s_frames[t] - spec.view_behind, s_frames[t] + spec.view_ahead
        visible = np.flatnonzero((obs_s >= lo) & (obs_s <= hi))
        n_obs = int(0.1 * npts) if len(visible) else 0
        n_wall = int(0.4 * npts)
        n_road = npts - n_obs - n_wall

        s = rng.uniform(lo, hi, n_road + n_wall)
        lateral = np.concatenate([
            rng.uniform(-half, half, n_road),
            rng.choice([-half, half], n_wall),
        ])
        z = np.concatenate([np.zeros(n_road), rng.uniform(0.0, spec.wall_height, n_wall)])
        cx, cy, cpsi = line.at(s)
        wx = cx - np.sin(cpsi) * lateral
        wy = cy + np.cos(cpsi) * lateral
        cls = np.concatenate([np.full(n_road, spec.road_class), np.full(n_wall, spec.wall_class)])
        if n_obs:
            which = visible[rng.integers(0, len(visible), n_obs)]
            ang = rng.uniform(0.0, 2 * np.pi, n_obs)
            wx = np.concatenate([wx, obs_xy[which, 0] + spec.obstacle_radius * np.cos(ang)])
            wy = np.concatenate([wy, obs_xy[which, 1] + spec.obstacle_radius * np.sin(ang)])
            z = np.concatenate([z, rng.uniform(0.0, spec.obstacle_height, n_obs)])
            cls = np.concatenate([cls, np.full(n_obs, spec.obstacle_class)])

        ex, ey, epsi = line.at(np.array([s_frames[t]]))
        c, sn = np.cos(-epsi[0]), np.sin(-epsi[0])
        dx, dy = wx - ex[0], wy - ey[0]
        pts = np.stack([c * dx - sn * dy, sn * dx + c * dy, z], axis=1)
        pts += rng.normal(0.0, spec.noise_sigma, pts.shape) if spec.noise_sigma > 0 else 0.0
        order = rng.permutation(npts)
        frames.append(PointCloud(pts[order], cls[order], frame_index=t, timestamp=t * spec.dt))

    return SyntheticSequence(frames, truth, v, kappa, spec.dt, valid)


def random_scene_spec(seed: int, n_frames: int = 24, points_per_frame: int = 256,
                      knot_every: int = 8, max_curvature: float = 0.1) -> SyntheticSceneSpec:
    """A corridor drive with randomly placed straights and left/right bends."""
    rng = np.random.default_rng([seed, 104729])
    knots = []
    for f in range(0, n_frames + knot_every, knot_every):
        if rng.random() < 0.3:
            k = 0.0
        else:
            k = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.02, max_curvature))
        knots.append((f, k))
    speed = float(rng.uniform(6.0, 10.0))
    return SyntheticSceneSpec(
        curvature_schedule=tuple(knots),
        velocity_profile=((0, speed),),
        n_frames=n_frames,
        points_per_frame=points_per_frame,
        seed=int(rng.integers(0, 2**31 - 1)),
    )
