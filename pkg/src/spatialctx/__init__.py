"""spatialctx: simulated RGB-D capture, a shared spatial-context store,
and point-cloud lighting estimation for desk-scale AR experiments."""

from .envmap import EnvMap, coverage, estimate_envmap, psnr
from .floorheight import FloorHeightMonitor, estimate_floor_height
from .geometry import (
    CameraIntrinsics,
    EquirectGrid,
    PointCloud,
    Pose,
    RGBDFrame,
    backproject,
    dir_to_pixel,
    pixel_to_dir,
    transform_point,
    voxel_merge,
)
from .scene import SceneSpec, default_scene, load_scene, render_frame, render_panorama
from .store import Anchor, ContextKey, ContextKind, ContextStore
from .trajectories import ScenarioParams, Trajectory, gen_guided, gen_look_around, gen_multi_user

__version__ = "0.1.0"

__all__ = [
    "EnvMap",
    "coverage",
    "estimate_envmap",
    "psnr",
    "FloorHeightMonitor",
    "estimate_floor_height",
    "CameraIntrinsics",
    "EquirectGrid",
    "PointCloud",
    "Pose",
    "RGBDFrame",
    "backproject",
    "dir_to_pixel",
    "pixel_to_dir",
    "transform_point",
    "voxel_merge",
    "SceneSpec",
    "default_scene",
    "load_scene",
    "render_frame",
    "render_panorama",
    "Anchor",
    "ContextKey",
    "ContextKind",
    "ContextStore",
    "ScenarioParams",
    "Trajectory",
    "gen_guided",
    "gen_look_around",
    "gen_multi_user",
    "__version__",
]
