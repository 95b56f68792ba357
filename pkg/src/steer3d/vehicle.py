"""Bicycle-model steering labels and dead-reckoned trajectories.

Two integrators are provided.  :func:`integrate_path_paper` uses the steering
angle itself as the travel direction, ``p += v dt (cos a, sin a)``.
:func:`integrate_path_kinematic` integrates heading through the yaw rate
``v tan(a) / L`` and moves along the heading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

WHEELBASE = 2.7
V_MIN = 0.5


class LowSpeedError(ValueError):
    pass


@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    heading: float
    velocity: float
    t: float


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered ego states.

    ``mode`` is ``"paper"`` when displacements point along absolute steering
    angles, ``"kinematic"`` when they follow the integrated heading.
    """

    states: tuple[EgoState, ...]
    mode: str = "kinematic"

    def __post_init__(self):
        ts = [s.t for s in self.states]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trajectory timestamps must increase strictly")

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, i) -> EgoState:
        return self.states[i]

    def xy(self) -> np.ndarray:
        return np.array([[s.x, s.y] for s in self.states])

    def to_csv(self) -> str:
        rows = ["t,x,y,heading,velocity"]
        rows += [",".join(repr(float(v)) for v in (s.t, s.x, s.y, s.heading, s.velocity)) for s in self.states]
        return "\n".join(rows) + "\n"


def steering_from_yaw(v: float, yaw_rate: float, L: float = WHEELBASE, v_min: float = V_MIN) -> float:
    if abs(v) < v_min:
        raise LowSpeedError(f"speed {v} m/s below {v_min} m/s")
    return math.atan(L * yaw_rate / v)


def yaw_from_steering(theta: float, v: float, L: float = WHEELBASE) -> float:
    if abs(theta) >= math.pi / 2:
        raise ValueError(f"steering {theta} rad outside (-pi/2, pi/2)")
    return v * math.tan(theta) / L


def _check(angles: Sequence[float], velocities: Sequence[float], dt: float) -> None:
    if len(angles) != len(velocities):
        raise ValueError(f"{len(angles)} angles vs {len(velocities)} velocities")
    if not dt > 0:
        raise ValueError("dt must be positive")


def integrate_path_paper(
    angles: Sequence[float], velocities: Sequence[float], dt: float, start: EgoState
) -> Trajectory:
    _check(angles, velocities, dt)
    states = [start]
    x, y, t = start.x, start.y, start.t
    for a, v in zip(angles, velocities):
        step = v * dt
        x, y, t = x + step * math.cos(a), y + step * math.sin(a), t + dt
        states.append(EgoState(x, y, float(a), float(v), t))
    return Trajectory(tuple(states), mode="paper")


def integrate_path_kinematic(
    angles: Sequence[float],
    velocities: Sequence[float],
    dt: float,
    start: EgoState,
    L: float = WHEELBASE,
) -> Trajectory:
    _check(angles, velocities, dt)
    states = [start]
    x, y, psi, t = start.x, start.y, start.heading, start.t
    for a, v in zip(angles, velocities):
        if abs(a) >= math.pi / 2:
            raise ValueError(f"steering {a} rad outside (-pi/2, pi/2)")
        psi = psi + v * dt * math.tan(a) / L
        x, y, t = x + v * dt * math.cos(psi), y + v * dt * math.sin(psi), t + dt
        states.append(EgoState(x, y, psi, float(v), t))
    return Trajectory(tuple(states), mode="kinematic")


def reset_at_waypoints(pred: Trajectory, truth: Trajectory, waypoints: Sequence[int]) -> Trajectory:
    """Snap ``pred`` onto ``truth`` at each waypoint and carry the correction forward.

    Kinematic paths are re-anchored by a rigid motion (rotation about the reset
    point plus translation), which equals re-integrating from the corrected
    state.  Paper-mode displacements do not depend on heading, so only the
    translation carries forward.
    """
    n = len(pred)
    if len(truth) < n:
        raise ValueError("truth trajectory shorter than prediction")
    wps = list(waypoints)
    if any(b <= a for a, b in zip(wps, wps[1:])):
        raise ValueError("waypoints must be strictly ascending")
    for w in wps:
        if not 0 <= w < n:
            raise IndexError(f"waypoint {w} outside trajectory of length {n}")
    rotate = pred.mode == "kinematic"
    wp = set(wps)
    # correction: p' = R (p - anchor) + target, heading' = heading + dpsi
    dpsi, anchor, target = 0.0, np.zeros(2), np.zeros(2)
    out = []
    for i, s in enumerate(pred.states):
        if i in wp:
            g = truth.states[i]
            dpsi = (g.heading - s.heading) if rotate else 0.0
            anchor, target = np.array([s.x, s.y]), np.array([g.x, g.y])
        c, sn = math.cos(dpsi), math.sin(dpsi)
        rel = np.array([s.x, s.y]) - anchor
        x = c * rel[0] - sn * rel[1] + target[0]
        y = sn * rel[0] + c * rel[1] + target[1]
        heading = s.heading + dpsi
        if i in wp:
            x, y, heading = truth.states[i].x, truth.states[i].y, truth.states[i].heading
        out.append(EgoState(x, y, heading, s.velocity, s.t))
    return Trajectory(tuple(out), mode=pred.mode)
