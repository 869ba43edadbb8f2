"""A versioned, owner-tagged, budgeted in-memory store of context entries
with change subscriptions.

One store serves one room/anchor session.  Multiple producer sessions and
consumer tasks may use it concurrently; writes to a key are serialized
under the store lock and version order is the single source of truth.
All observations fold into a single SHARED sparse point cloud entry, so
every consumer task sees the same refined environment context.
"""

from __future__ import annotations

import enum
import threading
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import DEFAULT_VOXEL_SIZE, PointCloud, RGBDFrame, backproject, voxel_merge
from . import wire


class ContextKind(enum.IntEnum):
    OBSERVATIONS = 1
    SPARSE_POINT_CLOUD = 2
    ANCHORS = 3
    DEVICE_META = 4


SHARED_SCOPE = "SHARED"


class UnknownKeyError(KeyError):
    pass


class AccessDeniedError(PermissionError):
    pass


class BudgetError(ValueError):
    pass


class SubscriptionCancelledError(RuntimeError):
    pass


@dataclass(frozen=True)
class ContextKey:
    kind: ContextKind
    scope: str = SHARED_SCOPE


@dataclass(frozen=True)
class Anchor:
    id: int
    position: tuple


@dataclass
class ContextEntry:
    key: ContextKey
    owner: int
    shared_flag: bool
    payload: object
    version: int = 0
    byte_size: int = 0
    last_update: float = 0.0


def payload_byte_size(payload) -> int:
    """Serialized size of an entry payload under the wire formats."""
    if isinstance(payload, PointCloud):
        return wire.CLOUD_HEADER_BYTES + payload.payload_bytes
    if isinstance(payload, (list, tuple)) and all(isinstance(a, Anchor) for a in payload):
        return len(wire.encode_anchors(list(payload)))
    if isinstance(payload, dict):
        return len(wire.encode_metadata(payload))
    if isinstance(payload, bytes):
        return len(payload)
    raise TypeError(f"unsupported payload type {type(payload).__name__}")


class Subscription:
    def __init__(self, kind: ContextKind):
        self.kind = kind
        self._pending: deque = deque()
        self.cancelled = False


class ContextStore:
    """Thread-safe map of (kind, scope) -> versioned entry, plus fan-out
    subscriptions, a memory budget over entry byte sizes, and an ingest
    counter tracking cumulative pre-dedup bytes published into it."""

    def __init__(self, voxel_size: float = DEFAULT_VOXEL_SIZE, budget_bytes: int | None = None):
        self.voxel_size = float(np.float32(voxel_size))
        self._lock = threading.RLock()
        self._entries: dict[ContextKey, ContextEntry] = {}
        self._subscriptions: list[Subscription] = []
        self._budget = budget_bytes
        self._ingested_bytes = 0
        self._shared_cloud_key = ContextKey(ContextKind.SPARSE_POINT_CLOUD, SHARED_SCOPE)

    # -- basic entry access --------------------------------------------------

    def put(self, key: ContextKey, payload, owner: int, shared_flag: bool = True,
            timestamp: float = 0.0) -> int:
        """Insert or overwrite; every overwrite bumps the version by one.
        Returns the new version."""
        if isinstance(payload, (list, tuple)) and payload and isinstance(payload[0], Anchor):
            ids = [a.id for a in payload]
            if len(set(ids)) != len(ids):
                raise ValueError("anchor ids must be unique within an entry")
        size = payload_byte_size(payload)
        with self._lock:
            prev = self._entries.get(key)
            version = 1 if prev is None else prev.version + 1
            self._entries[key] = ContextEntry(
                key=key, owner=owner, shared_flag=shared_flag, payload=payload,
                version=version, byte_size=size, last_update=timestamp,
            )
            self._notify(key, version)
            return version

    def get(self, key: ContextKey, requester: int) -> ContextEntry:
        """Latest entry for ``key``; non-shared entries are only visible
        to their owner."""
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                raise UnknownKeyError(f"no entry for {key}")
            if not entry.shared_flag and requester != entry.owner:
                raise AccessDeniedError(f"entry {key} is private to user {entry.owner}")
            return replace(entry)

    def keys(self) -> list[ContextKey]:
        with self._lock:
            return list(self._entries.keys())

    # -- shared cloud ingestion ----------------------------------------------

    def ingest_observation(self, frame: RGBDFrame) -> int:
        """Backproject a frame and fold it into the shared cloud entry.
        Returns the entry's new version."""
        cloud = backproject(frame, voxel_size=self.voxel_size)
        return self.ingest_cloud(cloud, timestamp=frame.timestamp)

    def ingest_cloud(self, cloud: PointCloud, timestamp: float = 0.0) -> int:
        if cloud.voxel_size != self.voxel_size:
            raise ValueError(
                f"cloud voxel size {cloud.voxel_size} does not match store voxel size {self.voxel_size}"
            )
        with self._lock:
            entry = self._entries.get(self._shared_cloud_key)
            base = entry.payload if entry is not None else PointCloud.empty(self.voxel_size)
            merged = voxel_merge(base, cloud)
            self._ingested_bytes += wire.CLOUD_HEADER_BYTES + cloud.payload_bytes
            version = 1 if entry is None else entry.version + 1
            self._entries[self._shared_cloud_key] = ContextEntry(
                key=self._shared_cloud_key, owner=0, shared_flag=True, payload=merged,
                version=version, byte_size=wire.CLOUD_HEADER_BYTES + merged.payload_bytes,
                last_update=timestamp,
            )
            self._notify(self._shared_cloud_key, version)
            return version

    def shared_cloud(self) -> tuple[int, PointCloud]:
        """(version, cloud) snapshot of the shared entry; (0, empty) when
        nothing has been ingested yet."""
        with self._lock:
            entry = self._entries.get(self._shared_cloud_key)
            if entry is None:
                return 0, PointCloud.empty(self.voxel_size)
            return entry.version, entry.payload

    @property
    def ingested_bytes(self) -> int:
        """Cumulative serialized bytes published into the store, before
        voxel deduplication; the memory-cost measure of a capture session."""
        with self._lock:
            return self._ingested_bytes

    # -- subscriptions ---------------------------------------------------------

    def subscribe(self, kind: ContextKind) -> Subscription:
        sub = Subscription(kind)
        with self._lock:
            self._subscriptions.append(sub)
        return sub

    def poll(self, sub: Subscription) -> list[tuple[ContextKey, int]]:
        """Drain pending (key, version) notifications in version order."""
        with self._lock:
            if sub.cancelled:
                raise SubscriptionCancelledError("subscription was cancelled")
            items = list(sub._pending)
            sub._pending.clear()
            return items

    def cancel(self, sub: Subscription):
        with self._lock:
            sub.cancelled = True
            if sub in self._subscriptions:
                self._subscriptions.remove(sub)

    def _notify(self, key: ContextKey, version: int):
        for sub in self._subscriptions:
            if sub.kind == key.kind and not sub.cancelled:
                sub._pending.append((key, version))

    # -- memory accounting ------------------------------------------------------

    def memory_usage(self) -> int:
        with self._lock:
            return sum(e.byte_size for e in self._entries.values())

    def set_budget(self, budget_bytes: int):
        if budget_bytes <= 0:
            raise BudgetError("budget must be positive")
        with self._lock:
            self._budget = int(budget_bytes)

    @property
    def budget(self) -> int | None:
        return self._budget

    def enforce_budget(self) -> int:
        """Evict oldest-timestamp points from the shared cloud until the
        total footprint fits the budget; whole points only.  Bumps the
        cloud version when anything was evicted.  Returns the resulting
        memory usage."""
        with self._lock:
            if self._budget is None:
                return self.memory_usage()
            usage = self.memory_usage()
            if usage <= self._budget:
                return usage
            entry = self._entries.get(self._shared_cloud_key)
            if entry is None:
                raise BudgetError(f"usage {usage} exceeds budget {self._budget} with nothing evictable")
            cloud: PointCloud = entry.payload
            other = usage - entry.byte_size
            floor_bytes = other + wire.CLOUD_HEADER_BYTES
            if floor_bytes > self._budget:
                raise BudgetError(
                    f"budget {self._budget} is below the fixed entry overhead {floor_bytes}"
                )
            keep_points = (self._budget - floor_bytes) // wire.POINT_RECORD_BYTES
            keep_points = min(keep_points, len(cloud))
            p = cloud.positions
            order = np.lexsort((p[:, 2], p[:, 1], p[:, 0], cloud.users, cloud.timestamps))
            survivors = np.sort(order[len(cloud) - keep_points:])
            pruned = cloud._take(survivors)
            version = entry.version + 1
            self._entries[self._shared_cloud_key] = ContextEntry(
                key=self._shared_cloud_key, owner=entry.owner, shared_flag=entry.shared_flag,
                payload=pruned, version=version,
                byte_size=wire.CLOUD_HEADER_BYTES + pruned.payload_bytes,
                last_update=entry.last_update,
            )
            self._notify(self._shared_cloud_key, version)
            return self.memory_usage()
