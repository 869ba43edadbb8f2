"""Analytic flat-radiance room scenes and their raycaster.

A scene is an axis-aligned box room, zero or more axis-aligned box
obstacles, and per-face radiance functions.  Surfaces are self-luminous
textured emitters: the radiance seen along a ray depends only on the hit
point, never on lighting transport.  That makes every camera render and
every panorama sample the exact same radiance field, which is what lets
point-cloud re-projection act as an exact oracle downstream.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .envmap import EnvMap
from .geometry import CameraIntrinsics, EquirectGrid, Pose, RGBDFrame, pixel_to_dir

HIT_EPS = 1e-6

FACE_NAMES = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")

__all__ = [
    "Box",
    "SolidStyle",
    "CheckerStyle",
    "GradientStyle",
    "EmissivePatch",
    "SceneSpec",
    "Hit",
    "raycast",
    "raycast_dirs",
    "render_frame",
    "render_panorama",
    "default_scene",
    "load_scene",
    "parse_scene",
    "scene_to_config",
]


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=np.float64).reshape(3))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=np.float64).reshape(3))
        if not np.all(self.lo < self.hi):
            raise ValueError("box min must be strictly below max on every axis")

    def contains(self, p, strict: bool = True) -> bool:
        p = np.asarray(p, dtype=np.float64)
        if strict:
            return bool(np.all(p > self.lo) and np.all(p < self.hi))
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))


@dataclass(frozen=True)
class SolidStyle:
    rgb: tuple

    def evaluate(self, pts: np.ndarray, face: "_Face") -> np.ndarray:
        return np.broadcast_to(np.asarray(self.rgb, dtype=np.float64), (len(pts), 3)).copy()


@dataclass(frozen=True)
class CheckerStyle:
    rgb_a: tuple
    rgb_b: tuple
    period: float = 0.5

    def evaluate(self, pts: np.ndarray, face: "_Face") -> np.ndarray:
        i, j = face.plane_axes
        parity = (np.floor(pts[:, i] / self.period) + np.floor(pts[:, j] / self.period)) % 2
        a = np.asarray(self.rgb_a, dtype=np.float64)
        b = np.asarray(self.rgb_b, dtype=np.float64)
        return np.where(parity[:, None] == 0, a, b)


@dataclass(frozen=True)
class GradientStyle:
    """Linear ramp along the face's second in-plane axis (z on walls)."""

    rgb_low: tuple
    rgb_high: tuple

    def evaluate(self, pts: np.ndarray, face: "_Face") -> np.ndarray:
        j = face.plane_axes[1]
        t = (pts[:, j] - face.bounds_lo[j]) / (face.bounds_hi[j] - face.bounds_lo[j])
        t = np.clip(t, 0.0, 1.0)[:, None]
        lo = np.asarray(self.rgb_low, dtype=np.float64)
        hi = np.asarray(self.rgb_high, dtype=np.float64)
        return lo + t * (hi - lo)


@dataclass(frozen=True)
class EmissivePatch:
    """Override rectangle on a room face, in that face's in-plane coords."""

    face: int  # room face id, 0..5
    rect: tuple  # (i_min, j_min, i_max, j_max)
    rgb: tuple


@dataclass
class _Face:
    surface_id: int
    axis: int  # normal axis
    plane_value: float
    bounds_lo: np.ndarray  # owning box bounds, used for in-plane extent
    bounds_hi: np.ndarray
    style: object

    @property
    def plane_axes(self) -> tuple[int, int]:
        return tuple(a for a in range(3) if a != self.axis)


def _check_rgb(rgb):
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.shape != (3,) or arr.min() < 0 or arr.max() > 1:
        raise ValueError(f"radiance must be three values in [0, 1], got {rgb}")
    return tuple(float(c) for c in arr)


class SceneSpec:
    """Room + obstacles + emissive patches with validated invariants."""

    def __init__(self, room: Box, face_styles, obstacles=(), patches=()):
        self.room = room
        if len(face_styles) != 6:
            raise ValueError("need one style per room face (6)")
        self.face_styles = list(face_styles)
        self.obstacles = [(box, style) for box, style in obstacles]
        for box, _ in self.obstacles:
            if not (np.all(box.lo > room.lo) and np.all(box.hi < room.hi)):
                raise ValueError("obstacles must lie strictly inside the room")
        self.patches = list(patches)
        self._faces = self._build_faces()
        for patch in self.patches:
            face = self._faces[patch.face]
            i, j = face.plane_axes
            i0, j0, i1, j1 = patch.rect
            if not (face.bounds_lo[i] <= i0 < i1 <= face.bounds_hi[i]
                    and face.bounds_lo[j] <= j0 < j1 <= face.bounds_hi[j]):
                raise ValueError("emissive patch rectangle must lie on its host face")
            _check_rgb(patch.rgb)

    def _build_faces(self) -> list[_Face]:
        faces = []
        for axis in range(3):
            for side, value in ((0, self.room.lo[axis]), (1, self.room.hi[axis])):
                faces.append(_Face(2 * axis + side, axis, value, self.room.lo, self.room.hi,
                                   self.face_styles[2 * axis + side]))
        for k, (box, style) in enumerate(self.obstacles):
            for axis in range(3):
                for side, value in ((0, box.lo[axis]), (1, box.hi[axis])):
                    faces.append(_Face(6 + 6 * k + 2 * axis + side, axis, value, box.lo, box.hi, style))
        return faces

    @property
    def faces(self) -> list[_Face]:
        return self._faces

    def validate_origin(self, origin):
        origin = np.asarray(origin, dtype=np.float64)
        if not self.room.contains(origin, strict=True):
            raise ValueError(f"ray origin {origin.tolist()} is not strictly inside the room")
        for box, _ in self.obstacles:
            if box.contains(origin, strict=False):
                raise ValueError(f"ray origin {origin.tolist()} lies inside an obstacle")
        return origin


@dataclass(frozen=True)
class Hit:
    t: float
    radiance: tuple
    surface_id: int


def raycast_dirs(scene: SceneSpec, origin, dirs: np.ndarray):
    """Cast unit rays from one interior origin; returns (t, radiance, surface_id).

    Room faces are hit from inside, obstacle faces from outside; the
    nearest intersection wins.  A closed box guarantees every ray hits.
    """
    origin = scene.validate_origin(origin)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(dirs)

    t_best = np.full(n, np.inf)
    surf = np.full(n, -1, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        # room exit faces
        for axis in range(3):
            d = dirs[:, axis]
            t_axis = np.where(
                d > 0,
                (scene.room.hi[axis] - origin[axis]) / d,
                np.where(d < 0, (scene.room.lo[axis] - origin[axis]) / d, np.inf),
            )
            face_id = np.where(d > 0, 2 * axis + 1, 2 * axis)
            closer = t_axis < t_best
            t_best = np.where(closer, t_axis, t_best)
            surf = np.where(closer, face_id, surf)
        # obstacle entry faces
        for k, (box, _) in enumerate(scene.obstacles):
            t_lo = (box.lo - origin) / dirs
            t_hi = (box.hi - origin) / dirs
            t_near_ax = np.minimum(t_lo, t_hi)
            t_far_ax = np.maximum(t_lo, t_hi)
            # axes with zero direction: inside slab -> (-inf, inf), else no hit
            zero = dirs == 0
            if zero.any():
                inside = (origin >= box.lo) & (origin <= box.hi)
                t_near_ax = np.where(zero, np.where(inside, -np.inf, np.inf), t_near_ax)
                t_far_ax = np.where(zero, np.where(inside, np.inf, -np.inf), t_far_ax)
            entry_axis = np.argmax(t_near_ax, axis=1)
            t_near = t_near_ax[np.arange(n), entry_axis]
            t_far = np.min(t_far_ax, axis=1)
            hit = (t_near <= t_far) & (t_near > HIT_EPS) & (t_near < t_best)
            d_entry = dirs[np.arange(n), entry_axis]
            face_id = 6 + 6 * k + 2 * entry_axis + (d_entry < 0).astype(np.int64)
            t_best = np.where(hit, t_near, t_best)
            surf = np.where(hit, face_id, surf)

    if not np.all(np.isfinite(t_best)):
        raise RuntimeError("ray escaped the closed room; scene invariants are broken")

    pts = origin + t_best[:, None] * dirs
    radiance = np.empty((n, 3), dtype=np.float64)
    for face_id in np.unique(surf):
        face = scene.faces[face_id]
        mask = surf == face_id
        radiance[mask] = face.style.evaluate(pts[mask], face)
    for patch in scene.patches:
        face = scene.faces[patch.face]
        mask = surf == face.surface_id
        if mask.any():
            i, j = face.plane_axes
            i0, j0, i1, j1 = patch.rect
            inside = mask.copy()
            inside[mask] = (
                (pts[mask, i] >= i0) & (pts[mask, i] < i1)
                & (pts[mask, j] >= j0) & (pts[mask, j] < j1)
            )
            radiance[inside] = np.asarray(patch.rgb, dtype=np.float64)
    return t_best, radiance, surf


def raycast(scene: SceneSpec, origin, direction) -> Hit:
    """Single-ray convenience wrapper around :func:`raycast_dirs`."""
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
        raise ValueError("ray direction must be unit length")
    t, radiance, surf = raycast_dirs(scene, origin, direction[None, :])
    return Hit(t=float(t[0]), radiance=tuple(radiance[0]), surface_id=int(surf[0]))


_PIXEL_GRID_CACHE: dict[CameraIntrinsics, tuple[np.ndarray, np.ndarray]] = {}


def _pixel_ray_grid(intrinsics: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Unit camera-frame rays through all pixel centers plus 1/|ray| (the
    factor turning Euclidean hit distance into z-depth); cached."""
    cached = _PIXEL_GRID_CACHE.get(intrinsics)
    if cached is None:
        w, h = intrinsics.width, intrinsics.height
        us = (np.arange(w) + 0.5 - intrinsics.cx) / intrinsics.fx
        vs = (np.arange(h) + 0.5 - intrinsics.cy) / intrinsics.fy
        xs, ys = np.meshgrid(us, vs)
        dirs_cam = np.stack([xs, ys, np.ones_like(xs)], axis=-1).reshape(-1, 3)
        inv_len = 1.0 / np.linalg.norm(dirs_cam, axis=1)
        cached = (dirs_cam * inv_len[:, None], inv_len)
        _PIXEL_GRID_CACHE[intrinsics] = cached
    return cached


def render_frame(
    scene: SceneSpec,
    pose: Pose,
    intrinsics: CameraIntrinsics,
    timestamp: float = 0.0,
    user_id: int = 0,
    depth_noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> RGBDFrame:
    """Raycast every pixel center; rgb is the hit radiance and depth the
    camera-frame z of the hit.  Deterministic unless depth noise is on
    (sigma is relative: std = sigma * depth), in which case ``rng`` is
    required."""
    w, h = intrinsics.width, intrinsics.height
    dirs_unit, inv_len = _pixel_ray_grid(intrinsics)
    dirs_world = dirs_unit @ pose.rotation_matrix().T
    t, radiance, _ = raycast_dirs(scene, pose.translation, dirs_world)
    depth = (t * inv_len).reshape(h, w)
    if depth_noise_sigma > 0.0:
        if rng is None:
            raise ValueError("depth noise requires an explicit rng for reproducibility")
        depth = depth * (1.0 + depth_noise_sigma * rng.standard_normal(depth.shape))
        depth = np.maximum(depth, 1e-3)
    return RGBDFrame(
        rgb=radiance.reshape(h, w, 3),
        depth=depth.astype(np.float32),
        pose=pose,
        intrinsics=intrinsics,
        timestamp=timestamp,
        user_id=user_id,
    )


def render_panorama(scene: SceneSpec, position, grid: EquirectGrid) -> EnvMap:
    """Exact ground-truth panorama at ``position``; every pixel is valid."""
    h, w = grid.shape
    uu, vv = np.meshgrid(np.arange(w), np.arange(h))
    dirs = pixel_to_dir(grid, uu.ravel(), vv.ravel())
    _, radiance, _ = raycast_dirs(scene, position, dirs)
    return EnvMap(
        grid=grid,
        rgb=radiance.reshape(h, w, 3),
        valid=np.ones((h, w), dtype=bool),
        anchor=np.asarray(position, dtype=np.float64),
    )


def default_scene() -> SceneSpec:
    """The standard 6x6x3 m test room.

    Checkered walls (period 0.5 m) over a bright palette, solid floor and
    ceiling, one white emissive ceiling patch, and a 1 m obstacle box in
    the +x/-y corner.  The palette keeps neighbouring radiances within
    0.1 per channel (so re-projected points match the panorama closely)
    while staying far from mid-gray (so missing coverage is costly).
    """
    wall = CheckerStyle(rgb_a=(1.0, 0.98, 0.96), rgb_b=(0.94, 0.92, 0.90), period=0.5)
    floor = SolidStyle(rgb=(0.90, 0.89, 0.87))
    ceiling = SolidStyle(rgb=(0.96, 0.96, 0.97))
    room = Box(lo=(-3.0, -3.0, 0.0), hi=(3.0, 3.0, 3.0))
    obstacle = (Box(lo=(1.7, -2.7, 0.001), hi=(2.7, -1.7, 1.0)), SolidStyle(rgb=(0.93, 0.91, 0.90)))
    patch = EmissivePatch(face=5, rect=(-0.5, -0.5, 0.5, 0.5), rgb=(1.0, 1.0, 1.0))
    return SceneSpec(
        room=room,
        face_styles=[wall, wall, wall, wall, floor, ceiling],
        obstacles=[obstacle],
        patches=[patch],
    )


# -- plain-text scene config ------------------------------------------------

def _parse_vec(text: str, n: int) -> tuple:
    parts = text.replace(",", " ").split()
    if len(parts) != n:
        raise ValueError(f"expected {n} numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _style_from_section(sec) -> object:
    kind = sec.get("style", "solid").strip().lower()
    if kind == "solid":
        return SolidStyle(rgb=_check_rgb(_parse_vec(sec["rgb"], 3)))
    if kind == "checker":
        return CheckerStyle(
            rgb_a=_check_rgb(_parse_vec(sec["rgb_a"], 3)),
            rgb_b=_check_rgb(_parse_vec(sec["rgb_b"], 3)),
            period=float(sec.get("period", "0.5")),
        )
    if kind == "gradient":
        return GradientStyle(
            rgb_low=_check_rgb(_parse_vec(sec["rgb_low"], 3)),
            rgb_high=_check_rgb(_parse_vec(sec["rgb_high"], 3)),
        )
    raise ValueError(f"unknown face style {kind!r}")


def parse_scene(text: str) -> SceneSpec:
    """Build a scene from key=value sections (see ``scene_to_config``)."""
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if "room" not in cp:
        raise ValueError("scene config requires a [room] section")
    room = Box(lo=_parse_vec(cp["room"]["min"], 3), hi=_parse_vec(cp["room"]["max"], 3))
    styles = [None] * 6
    obstacles = []
    patches = []
    for name in cp.sections():
        if name.startswith("face "):
            face_name = name.split(None, 1)[1].strip()
            if face_name not in FACE_NAMES:
                raise ValueError(f"unknown face {face_name!r}; expected one of {FACE_NAMES}")
            styles[FACE_NAMES.index(face_name)] = _style_from_section(cp[name])
        elif name.startswith("obstacle"):
            sec = cp[name]
            box = Box(lo=_parse_vec(sec["min"], 3), hi=_parse_vec(sec["max"], 3))
            obstacles.append((box, _style_from_section(sec)))
        elif name.startswith("patch"):
            sec = cp[name]
            face_name = sec["face"].strip()
            patches.append(
                EmissivePatch(
                    face=FACE_NAMES.index(face_name),
                    rect=_parse_vec(sec["rect"], 4),
                    rgb=_check_rgb(_parse_vec(sec["rgb"], 3)),
                )
            )
    missing = [FACE_NAMES[i] for i, s in enumerate(styles) if s is None]
    if missing:
        raise ValueError(f"scene config missing face sections: {missing}")
    return SceneSpec(room=room, face_styles=styles, obstacles=obstacles, patches=patches)


def load_scene(path) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as f:
        return parse_scene(f.read())


def _style_lines(style) -> list[str]:
    if isinstance(style, SolidStyle):
        return ["style = solid", "rgb = %g %g %g" % style.rgb]
    if isinstance(style, CheckerStyle):
        return [
            "style = checker",
            "rgb_a = %g %g %g" % style.rgb_a,
            "rgb_b = %g %g %g" % style.rgb_b,
            "period = %g" % style.period,
        ]
    if isinstance(style, GradientStyle):
        return ["style = gradient", "rgb_low = %g %g %g" % style.rgb_low, "rgb_high = %g %g %g" % style.rgb_high]
    raise TypeError(f"unknown style {style!r}")


def scene_to_config(scene: SceneSpec) -> str:
    """Serialize a scene back to the plain-text config format."""
    out = io.StringIO()
    out.write("[room]\n")
    out.write("min = %g %g %g\n" % tuple(scene.room.lo))
    out.write("max = %g %g %g\n" % tuple(scene.room.hi))
    for i, name in enumerate(FACE_NAMES):
        out.write(f"\n[face {name}]\n")
        out.write("\n".join(_style_lines(scene.face_styles[i])) + "\n")
    for k, (box, style) in enumerate(scene.obstacles):
        out.write(f"\n[obstacle {k + 1}]\n")
        out.write("min = %.10g %.10g %.10g\n" % tuple(box.lo))
        out.write("max = %.10g %.10g %.10g\n" % tuple(box.hi))
        out.write("\n".join(_style_lines(style)) + "\n")
    for k, patch in enumerate(scene.patches):
        out.write(f"\n[patch {k + 1}]\n")
        out.write(f"face = {FACE_NAMES[patch.face]}\n")
        out.write("rect = %g %g %g %g\n" % patch.rect)
        out.write("rgb = %g %g %g\n" % patch.rgb)
    return out.getvalue()
