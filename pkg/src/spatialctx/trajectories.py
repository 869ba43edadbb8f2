"""Deterministic camera trajectory generators for the three capture
scenarios: single-user look-around, multi-user circular formation, and
the guided two-pass sweep."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose, look_at_pose, quaternion_from_matrix

DEFAULT_FRAME_COUNT = 150
DEFAULT_FPS = 30.0
DEFAULT_ARM_PIVOT_HEIGHT = 1.4
DEFAULT_ARM_LENGTH = 0.5
DEFAULT_AZIMUTH_SWEEP_DEG = 35.0
DEFAULT_ELEVATION_SWEEP_DEG = 15.0
MULTI_USER_RADIUS = 1.5

TRAJECTORY_CSV_HEADER = "frame,timestamp,tx,ty,tz,qw,qx,qy,qz,user_id"

__all__ = [
    "Trajectory",
    "ScenarioParams",
    "gen_look_around",
    "gen_multi_user",
    "gen_guided",
    "trajectory_to_csv",
]


@dataclass
class Trajectory:
    frames: list  # ordered (timestamp, Pose)
    user_id: int

    def __post_init__(self):
        ts = [t for t, _ in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class ScenarioParams:
    """Placement geometry and sweep parameters shared by the generators."""

    anchor: tuple  # virtual object position (z above the floor)
    user_xy: tuple  # standing position on the floor plane
    arm_pivot_height: float = DEFAULT_ARM_PIVOT_HEIGHT
    arm_length: float = DEFAULT_ARM_LENGTH
    azimuth_sweep_deg: float = DEFAULT_AZIMUTH_SWEEP_DEG
    elevation_sweep_deg: float = DEFAULT_ELEVATION_SWEEP_DEG
    frame_count: int = DEFAULT_FRAME_COUNT
    fps: float = DEFAULT_FPS
    seed: int = 0
    user_id: int = 1
    room_lo: tuple = (-3.0, -3.0, 0.0)
    room_hi: tuple = (3.0, 3.0, 3.0)

    def __post_init__(self):
        if self.arm_length <= 0:
            raise ValueError("arm_length must be positive")
        anchor = np.asarray(self.anchor, dtype=np.float64)
        lo, hi = np.asarray(self.room_lo), np.asarray(self.room_hi)
        if not (np.all(anchor > lo) and np.all(anchor < hi)):
            raise ValueError("anchor must lie inside the room")
        user = np.asarray(self.user_xy, dtype=np.float64)
        if not (np.all(user > lo[:2]) and np.all(user < hi[:2])):
            raise ValueError("user position must lie inside the room")

    @property
    def pivot(self) -> np.ndarray:
        return np.array([self.user_xy[0], self.user_xy[1], self.arm_pivot_height])

    def timestamps(self) -> np.ndarray:
        return np.arange(self.frame_count, dtype=np.float64) / self.fps


def _dir_from_angles(azimuth: float, elevation: float) -> np.ndarray:
    ce = math.cos(elevation)
    return np.array([ce * math.cos(azimuth), ce * math.sin(azimuth), math.sin(elevation)])


def _check_in_room(position, params: ScenarioParams):
    lo, hi = np.asarray(params.room_lo), np.asarray(params.room_hi)
    if not (np.all(position > lo) and np.all(position < hi)):
        raise ValueError(f"camera position {np.asarray(position).tolist()} leaves the room")


def gen_look_around(params: ScenarioParams) -> Trajectory:
    """Hand-held look-around: the camera rides a rigid arm off a fixed
    pivot, swaying sinusoidally (two incommensurate frequencies, seeded
    phases) while always aiming at the anchor.  Reproduces the heavy view
    overlap of casual hand movement."""
    anchor = np.asarray(params.anchor, dtype=np.float64)
    pivot = params.pivot
    reach = float(np.linalg.norm(anchor[:2] - pivot[:2]))
    if not (0.8 <= reach <= 2.0):
        raise ValueError(f"user must stand within 0.8-2.0 m of the anchor (got {reach:.3f})")
    rng = np.random.default_rng([params.seed, params.user_id, 0xA1])
    phase_az, phase_el = rng.uniform(0.0, 2.0 * math.pi, size=2)
    base_az = math.atan2(anchor[1] - pivot[1], anchor[0] - pivot[0])
    base_el = math.atan2(anchor[2] - pivot[2], reach)
    freq_az = 0.35
    freq_el = 0.35 * math.sqrt(2.0)
    amp_az = math.radians(params.azimuth_sweep_deg)
    amp_el = math.radians(params.elevation_sweep_deg)
    frames = []
    for t in params.timestamps():
        az = base_az + amp_az * math.sin(2.0 * math.pi * freq_az * t + phase_az)
        el = base_el + amp_el * math.sin(2.0 * math.pi * freq_el * t + phase_el)
        position = pivot + params.arm_length * _dir_from_angles(az, el)
        _check_in_room(position, params)
        frames.append((float(t), look_at_pose(position, anchor)))
    return Trajectory(frames=frames, user_id=params.user_id)


def gen_multi_user(params: ScenarioParams, n_users: int = 3) -> list[Trajectory]:
    """Users ring the anchor at radius 1.5 m, azimuths 360*k/n from the
    base user's bearing; each runs its own look-around with a distinct
    user id and seed stream.  Timestamps align across users."""
    if n_users < 2:
        raise ValueError("multi-user scenario needs at least 2 users")
    anchor = np.asarray(params.anchor, dtype=np.float64)
    base_az = math.atan2(params.user_xy[1] - anchor[1], params.user_xy[0] - anchor[0])
    trajectories = []
    for k in range(n_users):
        az = base_az + 2.0 * math.pi * k / n_users
        user_xy = (anchor[0] + MULTI_USER_RADIUS * math.cos(az), anchor[1] + MULTI_USER_RADIUS * math.sin(az))
        user_params = replace(params, user_xy=user_xy, user_id=k + 1, seed=params.seed + k)
        trajectories.append(gen_look_around(user_params))
    return trajectories


def gen_guided(params: ScenarioParams) -> Trajectory:
    """Bootstrap sweep: camera fixed at the arm pivot, one full 360
    degree azimuth pass at elevation 0 for the first half of the frames,
    a second full pass at -30 degrees for the rest."""
    pivot = params.pivot
    _check_in_room(pivot, params)
    half = params.frame_count // 2
    frames = []
    for i, t in enumerate(params.timestamps()):
        pass_idx = 0 if i < half else 1
        step = i if i < half else i - half
        per_pass = half if pass_idx == 0 else params.frame_count - half
        az = 2.0 * math.pi * step / per_pass
        el = 0.0 if pass_idx == 0 else math.radians(-30.0)
        forward = _dir_from_angles(az, el)
        frames.append((float(t), look_at_pose(pivot, pivot + forward)))
    return Trajectory(frames=frames, user_id=params.user_id)


def trajectory_to_csv(traj: Trajectory) -> str:
    """CSV with columns frame,timestamp,tx,ty,tz,qw,qx,qy,qz,user_id."""
    out = io.StringIO()
    out.write(TRAJECTORY_CSV_HEADER + "\n")
    for i, (t, pose) in enumerate(traj.frames):
        tx, ty, tz = pose.translation
        qw, qx, qy, qz = pose.rotation
        fields = [str(i), repr(float(t))] + [repr(float(x)) for x in (tx, ty, tz, qw, qx, qy, qz)]
        out.write(",".join(fields) + f",{traj.user_id}\n")
    return out.getvalue()
