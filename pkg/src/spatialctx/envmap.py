"""Equirectangular environment maps: point-cloud estimation, quality
metrics, and binary PPM/PGM export."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import EquirectGrid, PointCloud, dir_to_pixel

DEFAULT_HOLE_COLOR = 0.5
PSNR_CAP_DB = 99.0

__all__ = [
    "EnvMap",
    "estimate_envmap",
    "psnr",
    "coverage",
    "save_ppm",
    "save_pgm",
    "ppm_bytes",
    "pgm_bytes",
]


@dataclass
class EnvMap:
    """Radiance panorama centered at ``anchor`` with a validity mask.

    Invalid pixels carry the hole color they were filled with.
    """

    grid: EquirectGrid
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    valid: np.ndarray  # (H, W) bool
    anchor: np.ndarray

    def __post_init__(self):
        if self.rgb.shape != (self.grid.height, self.grid.width, 3):
            raise ValueError("rgb buffer does not match grid shape")
        if self.valid.shape != (self.grid.height, self.grid.width):
            raise ValueError("validity mask does not match grid shape")
        self.anchor = np.asarray(self.anchor, dtype=np.float64).reshape(3)


def estimate_envmap(
    cloud: PointCloud,
    anchor,
    grid: EquirectGrid,
    hole_color: float = DEFAULT_HOLE_COLOR,
    stats_out: dict | None = None,
) -> EnvMap:
    """Z-buffer splat of a point cloud onto the sphere around ``anchor``.

    Each point claims the pixel its direction falls in; the point nearest
    to the anchor wins, ties going to the latest timestamp (then smaller
    user, then lexicographic position, for a total order).  Pixels no
    point claims are invalid and filled with ``hole_color``.  Points
    within 1e-6 of the anchor are skipped and tallied in ``stats_out``
    under ``"skipped_points"`` when a dict is supplied.
    """
    anchor = np.asarray(anchor, dtype=np.float64).reshape(3)
    h, w = grid.shape
    rgb = np.full((h, w, 3), hole_color, dtype=np.float64)
    valid = np.zeros((h, w), dtype=bool)
    skipped = 0
    if len(cloud):
        offsets = cloud.positions.astype(np.float64) - anchor
        dist = np.linalg.norm(offsets, axis=1)
        keep = dist >= 1e-6
        skipped = int((~keep).sum())
        if keep.any():
            offsets = offsets[keep]
            dist = dist[keep]
            dirs = offsets / dist[:, None]
            u, v = dir_to_pixel(grid, dirs)
            pix = v * w + u
            order = np.lexsort((dist, pix))
            pix_sorted = pix[order]
            first = np.ones(len(order), dtype=bool)
            first[1:] = pix_sorted[1:] != pix_sorted[:-1]
            # rows whose distance ties the front of their pixel group
            group = np.cumsum(first) - 1
            tied = dist[order] == dist[order[first]][group]
            if np.any(tied & ~first):
                # rare: break exact-distance ties by latest timestamp,
                # then smaller user, then lexicographic position
                cand = order[tied]
                p = cloud.positions[keep]
                sub = np.lexsort(
                    (p[cand, 2], p[cand, 1], p[cand, 0],
                     cloud.users[keep][cand], -cloud.timestamps[keep][cand], pix[cand])
                )
                cand = cand[sub]
                pixc = pix[cand]
                f2 = np.ones(len(cand), dtype=bool)
                f2[1:] = pixc[1:] != pixc[:-1]
                winners = cand[f2]
            else:
                winners = order[first]
            rows = pix[winners] // w
            cols = pix[winners] % w
            rgb[rows, cols] = cloud.colors[keep][winners].astype(np.float64)
            valid[rows, cols] = True
    if stats_out is not None:
        stats_out["skipped_points"] = skipped
    return EnvMap(grid=grid, rgb=rgb, valid=valid, anchor=anchor)


def psnr(estimate: EnvMap, truth: EnvMap) -> float:
    """Peak signal-to-noise ratio in dB over all pixels and channels.

    Radiance peak is 1.0; holes participate at their fill color.  Capped
    at 99 dB once MSE drops below 1e-10.
    """
    if estimate.grid.shape != truth.grid.shape:
        raise ValueError("environment map dimensions disagree")
    mse = float(np.mean((estimate.rgb - truth.rgb) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)


def coverage(estimate: EnvMap) -> float:
    """Fraction of pixels supported by at least one observed point."""
    return float(estimate.valid.mean())


def _quantize(values: np.ndarray) -> np.ndarray:
    # round half up, matching the wire color quantization
    return np.clip(np.floor(values * 255.0 + 0.5), 0, 255).astype(np.uint8)


def ppm_bytes(rgb: np.ndarray) -> bytes:
    h, w = rgb.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + _quantize(rgb).tobytes()


def pgm_bytes(mask: np.ndarray) -> bytes:
    h, w = mask.shape
    data = np.where(mask, 255, 0).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (w, h) + data.tobytes()


def save_ppm(path, envmap: EnvMap):
    with open(path, "wb") as f:
        f.write(ppm_bytes(envmap.rgb))


def save_pgm(path, envmap: EnvMap):
    with open(path, "wb") as f:
        f.write(pgm_bytes(envmap.valid))
