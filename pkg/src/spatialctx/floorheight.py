"""Floor height estimation from the shared point cloud.

A second consumer of the context store, there to demonstrate that one
refined cloud can feed multiple environment-understanding tasks at once.
"""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud
from .store import ContextKind, ContextStore

BIN_METERS = 0.02
MIN_POINTS = 100
MIN_BIN_FRACTION = 0.05

__all__ = ["estimate_floor_height", "FloorHeightMonitor"]


def estimate_floor_height(cloud: PointCloud) -> float:
    """Center of the lowest 2 cm z-histogram bin holding at least 5% of
    the points.  Requires at least 100 points."""
    if len(cloud) < MIN_POINTS:
        raise ValueError(f"floor estimation needs at least {MIN_POINTS} points, got {len(cloud)}")
    z = cloud.positions[:, 2].astype(np.float64)
    bins = np.floor(z / BIN_METERS).astype(np.int64)
    idx, counts = np.unique(bins, return_counts=True)
    threshold = MIN_BIN_FRACTION * len(cloud)
    qualifying = idx[counts >= threshold]
    if qualifying.size == 0:
        raise ValueError("no z-bin holds enough points to be a floor")
    return float((qualifying.min() + 0.5) * BIN_METERS)


class FloorHeightMonitor:
    """Keeps a floor height estimate current by recomputing on every
    shared-cloud notification."""

    def __init__(self, store: ContextStore):
        self.store = store
        self.subscription = store.subscribe(ContextKind.SPARSE_POINT_CLOUD)
        self.height: float | None = None
        self.updates = 0

    def refresh(self) -> float | None:
        """Poll pending notifications; recompute once per notification."""
        for _ in self.store.poll(self.subscription):
            _, cloud = self.store.shared_cloud()
            self.updates += 1
            try:
                self.height = estimate_floor_height(cloud)
            except ValueError:
                self.height = None
        return self.height
