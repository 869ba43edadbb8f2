"""Poses, pinhole projection, colored point clouds, and equirectangular grids.

Conventions used throughout the package:

* World frame: right-handed, z up, units in meters.
* Camera frame: +z forward (optical axis), +x right, +y down.
* Depth images store camera-frame z of the hit point (z-depth), not the
  Euclidean ray length.  Invalid pixels are NaN.
* Pixel (u, v) samples the ray through its center (u + 0.5, v + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_TOL = 1e-6
DEFAULT_VOXEL_SIZE = 0.05
POINT_RECORD_BYTES = 15  # 3 x f32 position + 3 x u8 color on the wire

__all__ = [
    "Pose",
    "CameraIntrinsics",
    "RGBDFrame",
    "PointCloud",
    "EquirectGrid",
    "transform_point",
    "project_point",
    "backproject",
    "voxel_merge",
    "dedup_points",
    "look_at_pose",
    "pixel_to_dir",
    "dir_to_pixel",
]


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping camera-frame points into the world frame.

    ``rotation`` is a unit quaternion (w, x, y, z); ``translation`` is the
    camera origin in world coordinates.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
            raise ValueError(f"quaternion norm {np.linalg.norm(q):.9f} is not 1 within {QUAT_TOL}")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.rotation
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def compose(self, other: "Pose") -> "Pose":
        """Return self applied after other maps through self: world <- self <- other."""
        w1, x1, y1, z1 = self.rotation
        w2, x2, y2, z2 = other.rotation
        q = np.array(
            [
                w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            ]
        )
        q /= np.linalg.norm(q)
        t = self.rotation_matrix() @ other.translation + self.translation
        return Pose(q, t)

    def inverse(self) -> "Pose":
        w, x, y, z = self.rotation
        q_inv = np.array([w, -x, -y, -z])
        r_inv = self.rotation_matrix().T
        return Pose(q_inv, -(r_inv @ self.translation))


def quaternion_from_matrix(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w,x,y,z) for a proper rotation matrix, w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def look_at_pose(position, target, up_hint=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose at ``position`` with +z (forward) aimed at ``target``.

    The camera is rolled so that image-up (-y) is as close to ``up_hint``
    as possible; near-degenerate forward/up alignment falls back to +x.
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm < 1e-9:
        raise ValueError("look_at target coincides with camera position")
    forward = forward / norm
    right = np.cross(forward, np.asarray(up_hint, dtype=np.float64))
    if np.linalg.norm(right) < 1e-8:
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    r = np.stack([right, down, forward], axis=1)
    return Pose(quaternion_from_matrix(r), position)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image bounds")

    @staticmethod
    def from_hfov(width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return CameraIntrinsics(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


@dataclass
class RGBDFrame:
    """One simulated capture: radiance + z-depth with pose and provenance."""

    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W) z-depth in meters, NaN where invalid
    pose: Pose
    intrinsics: CameraIntrinsics
    timestamp: float
    user_id: int

    def validate(self):
        h, w = self.depth.shape
        if self.rgb.shape != (h, w, 3):
            raise ValueError("rgb and depth buffer shapes disagree")
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise ValueError("intrinsics dimensions disagree with buffer sizes")
        finite = self.depth[np.isfinite(self.depth)]
        if finite.size and finite.min() <= 0:
            raise ValueError("finite depth values must be positive")
        if self.rgb.min() < 0 or self.rgb.max() > 1:
            raise ValueError("rgb values must lie in [0, 1]")


class PointCloud:
    """Voxel-deduplicated colored points in world space.

    At most one point occupies any voxel of edge ``voxel_size`` (voxel
    index = floor(coordinate / voxel_size) per axis).  Each point carries
    the color it was observed with, the observation timestamp, and the id
    of the user whose frame produced it.
    """

    def __init__(self, positions, colors, timestamps, users, voxel_size: float = DEFAULT_VOXEL_SIZE):
        self.positions = np.asarray(positions, dtype=np.float32).reshape(-1, 3)
        self.colors = np.asarray(colors, dtype=np.float32).reshape(-1, 3)
        self.timestamps = np.asarray(timestamps, dtype=np.float64).reshape(-1)
        self.users = np.asarray(users, dtype=np.int32).reshape(-1)
        n = len(self.positions)
        if not (len(self.colors) == len(self.timestamps) == len(self.users) == n):
            raise ValueError("point attribute arrays must have equal length")
        # voxel_size is held at f32 precision so wire round-trips compare equal
        self.voxel_size = float(np.float32(voxel_size))
        # set by dedup_points/voxel_merge: rows are unique per voxel and
        # sorted by voxel key, enabling the sorted-merge fast path
        self._canonical_dedup = False
        self._voxel_cache: np.ndarray | None = None

    @staticmethod
    def empty(voxel_size: float = DEFAULT_VOXEL_SIZE) -> "PointCloud":
        return PointCloud(
            np.empty((0, 3), np.float32), np.empty((0, 3), np.float32),
            np.empty(0, np.float64), np.empty(0, np.int32), voxel_size,
        )

    def __len__(self) -> int:
        return len(self.positions)

    def voxel_indices(self) -> np.ndarray:
        # clouds are treated as immutable, so the indices are cached
        if self._voxel_cache is None:
            self._voxel_cache = np.floor(
                self.positions.astype(np.float64) / self.voxel_size
            ).astype(np.int64)
        return self._voxel_cache

    def _voxel_keys(self) -> np.ndarray:
        """Voxel index triples packed into one int64 per point."""
        vox = self.voxel_indices()
        if len(vox) == 0:
            return np.empty(0, dtype=np.int64)
        lo = vox.min(axis=0)
        span = vox.max(axis=0) - lo + 1
        if int(span[0]) * int(span[1]) * int(span[2]) > 2**62:
            raise ValueError("point cloud spans too many voxels to index")
        rel = vox - lo
        return (rel[:, 0] * span[1] + rel[:, 1]) * span[2] + rel[:, 2]

    @property
    def payload_bytes(self) -> int:
        """Serialized size of the point records alone (15 bytes each)."""
        return len(self) * POINT_RECORD_BYTES

    def canonical_order(self) -> "PointCloud":
        """Points sorted lexicographically by position; the wire order."""
        p = self.positions
        order = np.lexsort((p[:, 2], p[:, 1], p[:, 0]))
        return self._take(order)

    def _take(self, idx) -> "PointCloud":
        return PointCloud(
            self.positions[idx], self.colors[idx], self.timestamps[idx], self.users[idx], self.voxel_size
        )

    def concat(self, other: "PointCloud") -> "PointCloud":
        return PointCloud(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.colors, other.colors]),
            np.concatenate([self.timestamps, other.timestamps]),
            np.concatenate([self.users, other.users]),
            self.voxel_size,
        )


def dedup_points(cloud: PointCloud) -> PointCloud:
    """Keep one point per voxel: latest timestamp, ties to the smaller
    source user, then the lexicographically smallest position.  The
    result is sorted by voxel index."""
    if len(cloud) == 0 or cloud._canonical_dedup:
        return cloud
    keys = cloud._voxel_keys()
    p = cloud.positions
    order = np.lexsort((p[:, 2], p[:, 1], p[:, 0], cloud.users, -cloud.timestamps, keys))
    ks = keys[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = ks[1:] != ks[:-1]
    out = cloud._take(order[first])
    out._canonical_dedup = True
    return out


def _dedup_single_capture(cloud: PointCloud) -> PointCloud:
    """Voxel dedup for points sharing one timestamp and user (one frame):
    the first point in scan order survives.  Sorted by voxel index."""
    if len(cloud) == 0:
        return cloud
    keys = cloud._voxel_keys()
    order = np.argsort(keys, kind="stable")
    ks = keys[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = ks[1:] != ks[:-1]
    out = cloud._take(order[first])
    out._canonical_dedup = True
    return out


def _lex_less(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """Row-wise lexicographic pa < pb for (n, 3) position arrays."""
    return (
        (pa[:, 0] < pb[:, 0])
        | ((pa[:, 0] == pb[:, 0]) & (pa[:, 1] < pb[:, 1]))
        | ((pa[:, 0] == pb[:, 0]) & (pa[:, 1] == pb[:, 1]) & (pa[:, 2] < pb[:, 2]))
    )


def voxel_merge(a: PointCloud, b: PointCloud) -> PointCloud:
    """Union of two clouds under the per-voxel replacement policy.

    Order-independent: within a voxel the latest-timestamp point survives,
    ties broken by smaller source user then lexicographic position.
    """
    if a.voxel_size != b.voxel_size:
        raise ValueError(f"voxel size mismatch: {a.voxel_size} vs {b.voxel_size}")
    if not (a._canonical_dedup and b._canonical_dedup):
        return dedup_points(a.concat(b))
    if len(b) == 0:
        return a
    if len(a) == 0:
        return b
    # both sides are voxel-sorted and collision-free: resolve collisions
    # pairwise, then merge the two sorted runs
    vox = np.concatenate([a.voxel_indices(), b.voxel_indices()])
    lo = vox.min(axis=0)
    span = vox.max(axis=0) - lo + 1
    if int(span[0]) * int(span[1]) * int(span[2]) > 2**62:
        return dedup_points(a.concat(b))
    rel = vox - lo
    keys = (rel[:, 0] * span[1] + rel[:, 1]) * span[2] + rel[:, 2]
    keys_a, keys_b = keys[: len(a)], keys[len(a):]
    pos = np.searchsorted(keys_a, keys_b)
    hit = (pos < len(a)) & (keys_a[np.minimum(pos, len(a) - 1)] == keys_b)
    positions, colors = a.positions, a.colors
    timestamps, users = a.timestamps, a.users
    if hit.any():
        ia = pos[hit]
        ib = np.nonzero(hit)[0]
        ts_a, ts_b = timestamps[ia], b.timestamps[ib]
        us_a, us_b = users[ia], b.users[ib]
        b_wins = (
            (ts_b > ts_a)
            | ((ts_b == ts_a) & (us_b < us_a))
            | ((ts_b == ts_a) & (us_b == us_a) & _lex_less(b.positions[ib], positions[ia]))
        )
        if b_wins.any():
            replace_at = ia[b_wins]
            src = ib[b_wins]
            positions = positions.copy()
            colors = colors.copy()
            timestamps = timestamps.copy()
            users = users.copy()
            positions[replace_at] = b.positions[src]
            colors[replace_at] = b.colors[src]
            timestamps[replace_at] = b.timestamps[src]
            users[replace_at] = b.users[src]
    fresh = ~hit
    n_fresh = int(fresh.sum())
    if n_fresh:
        insert_at = pos[fresh]
        n_a = len(a)
        displaced = np.cumsum(np.bincount(insert_at, minlength=n_a + 1))
        a_dest = np.arange(n_a) + displaced[:n_a]
        fresh_dest = insert_at + np.arange(n_fresh)
        n_out = n_a + n_fresh

        def assemble(src_a, src_b):
            out = np.empty((n_out,) + src_a.shape[1:], dtype=src_a.dtype)
            out[a_dest] = src_a
            out[fresh_dest] = src_b[fresh]
            return out

        positions = assemble(positions, b.positions)
        colors = assemble(colors, b.colors)
        timestamps = assemble(timestamps, b.timestamps)
        users = assemble(users, b.users)
    out = PointCloud(positions, colors, timestamps, users, a.voxel_size)
    out._canonical_dedup = True
    return out


def transform_point(pose: Pose, p_cam) -> np.ndarray:
    """Map a camera-frame point into the world frame (R @ p + t)."""
    return pose.rotation_matrix() @ np.asarray(p_cam, dtype=np.float64) + pose.translation


def project_point(pose: Pose, intrinsics: CameraIntrinsics, p_world) -> tuple[float, float, float]:
    """Pinhole projection of a world point; returns (u, v, z) with u, v in
    pixel-index units (integer values land on pixel centers)."""
    p_cam = pose.rotation_matrix().T @ (np.asarray(p_world, dtype=np.float64) - pose.translation)
    z = p_cam[2]
    if z <= 0:
        return math.nan, math.nan, z
    u = intrinsics.fx * p_cam[0] / z + intrinsics.cx - 0.5
    v = intrinsics.fy * p_cam[1] / z + intrinsics.cy - 0.5
    return u, v, z


def backproject(frame: RGBDFrame, voxel_size: float = DEFAULT_VOXEL_SIZE) -> PointCloud:
    """Lift every valid depth pixel into a world-space point cloud.

    Pixel (u, v) with z-depth d maps to the camera-frame point
    ((u+0.5-cx)/fx * d, (v+0.5-cy)/fy * d, d), then through the frame pose.
    Points inherit the pixel color, the frame timestamp and user id, and
    the result is voxel-deduplicated.
    """
    intr = frame.intrinsics
    h, w = frame.depth.shape
    if frame.rgb.shape != (h, w, 3) or (w, h) != (intr.width, intr.height):
        raise ValueError("intrinsics dimensions disagree with buffer sizes")
    valid = np.isfinite(frame.depth)
    if not valid.any():
        return PointCloud.empty(voxel_size)
    vv, uu = np.nonzero(valid)
    d = frame.depth[vv, uu].astype(np.float64)
    x = (uu + 0.5 - intr.cx) / intr.fx * d
    y = (vv + 0.5 - intr.cy) / intr.fy * d
    pts_cam = np.stack([x, y, d], axis=1)
    pts_world = pts_cam @ frame.pose.rotation_matrix().T + frame.pose.translation
    cloud = PointCloud(
        pts_world.astype(np.float32),
        frame.rgb[vv, uu],
        np.full(len(d), frame.timestamp, dtype=np.float64),
        np.full(len(d), frame.user_id, dtype=np.int32),
        voxel_size,
    )
    return dedup_points(cloud)


@dataclass(frozen=True)
class EquirectGrid:
    """Equirectangular pixel grid over the full sphere, H = W/2.

    Pixel centers map to directions via azimuth theta = 2*pi*(u+0.5)/W - pi
    and elevation phi = pi/2 - pi*(v+0.5)/H; direction is
    (cos(phi)cos(theta), cos(phi)sin(theta), sin(phi)).
    """

    width: int
    height: int = field(default=0)

    def __post_init__(self):
        if self.height == 0:
            object.__setattr__(self, "height", self.width // 2)
        if self.width != 2 * self.height or self.width <= 0:
            raise ValueError("equirect grid requires H = W/2")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def pixel_to_dir(grid: EquirectGrid, u, v) -> np.ndarray:
    """Unit direction through the center of pixel (u, v); vectorized."""
    u = np.asarray(u)
    v = np.asarray(v)
    if np.any(u < 0) or np.any(u >= grid.width) or np.any(v < 0) or np.any(v >= grid.height):
        raise ValueError("pixel index out of range")
    theta = 2.0 * np.pi * (u + 0.5) / grid.width - np.pi
    phi = np.pi / 2.0 - np.pi * (v + 0.5) / grid.height
    cp = np.cos(phi)
    return np.stack(np.broadcast_arrays(cp * np.cos(theta), cp * np.sin(theta), np.sin(phi)), axis=-1)


def dir_to_pixel(grid: EquirectGrid, d) -> tuple[np.ndarray, np.ndarray]:
    """Pixel (u, v) whose angular cell contains unit direction ``d``."""
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-6):
        raise ValueError("directions must be unit length")
    theta = np.arctan2(d[..., 1], d[..., 0])
    phi = np.arcsin(np.clip(d[..., 2], -1.0, 1.0))
    u = np.floor((theta + np.pi) / (2.0 * np.pi) * grid.width).astype(np.int64)
    v = np.floor((np.pi / 2.0 - phi) / np.pi * grid.height).astype(np.int64)
    return np.clip(u, 0, grid.width - 1), np.clip(v, 0, grid.height - 1)
