"""Binary serialization: length-prefixed message framing plus the blob
formats for point clouds, frames, anchors, and metadata.

Framing: a u32 little-endian length (covering type byte + payload), one
type byte, then the payload.  Point clouds travel as 14-byte-header blobs
with 15 bytes per point (3 x f32 position, 3 x u8 color), which is the
byte size every memory figure in the package is accounted in.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, Pose, CameraIntrinsics, RGBDFrame

MSG_HELLO = 0x01
MSG_PUBLISH = 0x02
MSG_FETCH = 0x03
MSG_SNAPSHOT = 0x04
MSG_ERROR = 0x05
_KNOWN_TYPES = (MSG_HELLO, MSG_PUBLISH, MSG_FETCH, MSG_SNAPSHOT, MSG_ERROR)

CLOUD_MAGIC = b"SCTX1"
FRAME_MAGIC = b"SFRM1"
ANCHORS_MAGIC = b"SANC1"
META_MAGIC = b"SMET1"
FORMAT_BYTE = 0x01

POINT_RECORD_BYTES = 15
CLOUD_HEADER_BYTES = 14  # magic(5) + format(1) + voxel f32 + count u32
FRAME_HEADER_BYTES = 114

MAX_FRAME_BYTES = 64 * 1024 * 1024

# error codes carried in ERROR payloads
ERR_SEQUENCE = 1
ERR_BAD_PAYLOAD = 2
ERR_UNSUPPORTED_KIND = 3
ERR_ACCESS_DENIED = 4
ERR_VOXEL_MISMATCH = 5
ERR_MALFORMED = 6


class ProtocolError(Exception):
    pass


class TruncatedError(ProtocolError):
    pass


class BadMagicError(ProtocolError):
    pass


class UnknownTypeError(ProtocolError):
    pass


class LengthMismatchError(ProtocolError):
    pass


@dataclass(frozen=True)
class HelloMsg:
    user_id: int


@dataclass(frozen=True)
class PublishMsg:
    blob: bytes  # a cloud or frame blob, distinguished by magic


@dataclass(frozen=True)
class FetchMsg:
    kind: int


@dataclass(frozen=True)
class SnapshotMsg:
    version: int
    blob: bytes


@dataclass(frozen=True)
class ErrorMsg:
    code: int
    detail: str = ""


Message = HelloMsg | PublishMsg | FetchMsg | SnapshotMsg | ErrorMsg


def _frame(msg_type: int, payload: bytes) -> bytes:
    return struct.pack("<I", 1 + len(payload)) + bytes([msg_type]) + payload


def encode(msg: Message) -> bytes:
    if isinstance(msg, HelloMsg):
        return _frame(MSG_HELLO, struct.pack("<I", msg.user_id))
    if isinstance(msg, PublishMsg):
        return _frame(MSG_PUBLISH, msg.blob)
    if isinstance(msg, FetchMsg):
        return _frame(MSG_FETCH, bytes([msg.kind]))
    if isinstance(msg, SnapshotMsg):
        return _frame(MSG_SNAPSHOT, struct.pack("<I", msg.version) + msg.blob)
    if isinstance(msg, ErrorMsg):
        return _frame(MSG_ERROR, struct.pack("<I", msg.code) + msg.detail.encode("utf-8"))
    raise TypeError(f"not a wire message: {msg!r}")


def _parse_payload(msg_type: int, payload: bytes) -> Message:
    if msg_type == MSG_HELLO:
        if len(payload) != 4:
            raise LengthMismatchError("HELLO payload must be exactly 4 bytes")
        return HelloMsg(user_id=struct.unpack("<I", payload)[0])
    if msg_type == MSG_PUBLISH:
        return PublishMsg(blob=payload)
    if msg_type == MSG_FETCH:
        if len(payload) != 1:
            raise LengthMismatchError("FETCH payload must be exactly 1 byte")
        return FetchMsg(kind=payload[0])
    if msg_type == MSG_SNAPSHOT:
        if len(payload) < 4:
            raise TruncatedError("SNAPSHOT payload shorter than its version field")
        return SnapshotMsg(version=struct.unpack("<I", payload[:4])[0], blob=payload[4:])
    if msg_type == MSG_ERROR:
        if len(payload) < 4:
            raise TruncatedError("ERROR payload shorter than its code field")
        return ErrorMsg(code=struct.unpack("<I", payload[:4])[0], detail=payload[4:].decode("utf-8"))
    raise UnknownTypeError(f"unknown message type 0x{msg_type:02x}")


def decode(data: bytes) -> Message:
    """Decode exactly one framed message; rejects truncation, trailing
    bytes, unknown types, and length mismatches, each distinguishably."""
    if len(data) < 5:
        raise TruncatedError(f"frame needs at least 5 bytes, got {len(data)}")
    length = struct.unpack("<I", data[:4])[0]
    if length < 1:
        raise LengthMismatchError("declared length must cover the type byte")
    if length > MAX_FRAME_BYTES:
        raise LengthMismatchError(f"declared length {length} exceeds the frame cap")
    if len(data) - 4 < length:
        raise TruncatedError(f"frame declares {length} bytes but only {len(data) - 4} follow")
    if len(data) - 4 > length:
        raise LengthMismatchError(f"frame declares {length} bytes but {len(data) - 4} follow")
    return _parse_payload(data[4], data[5:])


class FrameReader:
    """Incremental splitter of a byte stream into framed messages."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < 4:
                return out
            length = struct.unpack("<I", bytes(self._buf[:4]))[0]
            if length < 1:
                raise LengthMismatchError("declared length must cover the type byte")
            if length > MAX_FRAME_BYTES:
                raise LengthMismatchError(f"declared length {length} exceeds the frame cap")
            if len(self._buf) < 4 + length:
                return out
            frame = bytes(self._buf[: 4 + length])
            del self._buf[: 4 + length]
            out.append(_parse_payload(frame[4], frame[5:]))

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


# -- point cloud blob ---------------------------------------------------------

def quantize_color(colors: np.ndarray) -> np.ndarray:
    """[0,1] floats to u8, round half up (matches PPM export)."""
    return np.clip(np.floor(np.asarray(colors, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def encode_cloud(cloud: PointCloud) -> bytes:
    """Canonical cloud blob: points sorted lexicographically by position,
    14-byte header, 15 bytes per point."""
    ordered = cloud.canonical_order()
    header = CLOUD_MAGIC + bytes([FORMAT_BYTE]) + struct.pack("<fI", np.float32(cloud.voxel_size), len(ordered))
    if len(ordered) == 0:
        return header
    recs = np.zeros(len(ordered), dtype=np.dtype([("pos", "<f4", 3), ("rgb", "u1", 3)]))
    recs["pos"] = ordered.positions
    recs["rgb"] = quantize_color(ordered.colors)
    return header + recs.tobytes()


def decode_cloud(data: bytes, user_id: int = 0, timestamp: float = 0.0) -> PointCloud:
    """Inverse of :func:`encode_cloud`.  Colors come back quantized to
    1/255 steps; timestamps and users, which the format does not carry,
    are filled from the arguments."""
    if len(data) < CLOUD_HEADER_BYTES:
        raise TruncatedError("cloud blob shorter than its header")
    if data[:5] != CLOUD_MAGIC:
        raise BadMagicError(f"bad cloud magic {data[:5]!r}")
    voxel_size, count = struct.unpack("<fI", data[6:14])
    body = data[CLOUD_HEADER_BYTES:]
    if len(body) != count * POINT_RECORD_BYTES:
        raise LengthMismatchError(
            f"cloud blob declares {count} points but carries {len(body)} record bytes"
        )
    recs = np.frombuffer(body, dtype=np.dtype([("pos", "<f4", 3), ("rgb", "u1", 3)]))
    return PointCloud(
        recs["pos"].copy(),
        recs["rgb"].astype(np.float32) / 255.0,
        np.full(count, timestamp, dtype=np.float64),
        np.full(count, user_id, dtype=np.int32),
        float(np.float32(voxel_size)),
    )


# -- frame blob ---------------------------------------------------------------

def encode_frame_blob(frame: RGBDFrame) -> bytes:
    """Raw observation blob for thin clients: pose and intrinsics at
    full f64 precision, f32 depth, u8 color."""
    frame.validate()
    intr = frame.intrinsics
    header = FRAME_MAGIC + bytes([FORMAT_BYTE])
    header += struct.pack("<Id", frame.user_id, frame.timestamp)
    header += struct.pack("<7d", *frame.pose.rotation, *frame.pose.translation)
    header += struct.pack("<4dII", intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height)
    depth = np.ascontiguousarray(frame.depth, dtype="<f4")
    rgb = quantize_color(frame.rgb)
    return header + depth.tobytes() + rgb.tobytes()


def decode_frame_blob(data: bytes) -> RGBDFrame:
    if len(data) < FRAME_HEADER_BYTES:
        raise TruncatedError("frame blob shorter than its header")
    if data[:5] != FRAME_MAGIC:
        raise BadMagicError(f"bad frame magic {data[:5]!r}")
    user_id, timestamp = struct.unpack("<Id", data[6:18])
    pose_vals = struct.unpack("<7d", data[18:74])
    fx, fy, cx, cy, width, height = struct.unpack("<4dII", data[74:114])
    n = width * height
    expected = FRAME_HEADER_BYTES + 4 * n + 3 * n
    if len(data) != expected:
        raise LengthMismatchError(f"frame blob should be {expected} bytes, got {len(data)}")
    depth = np.frombuffer(data, dtype="<f4", count=n, offset=FRAME_HEADER_BYTES).reshape(height, width)
    rgb_u8 = np.frombuffer(data, dtype=np.uint8, count=3 * n, offset=FRAME_HEADER_BYTES + 4 * n)
    frame = RGBDFrame(
        rgb=rgb_u8.reshape(height, width, 3).astype(np.float64) / 255.0,
        depth=depth.copy(),
        pose=Pose(np.array(pose_vals[:4]), np.array(pose_vals[4:])),
        intrinsics=CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height),
        timestamp=timestamp,
        user_id=user_id,
    )
    frame.validate()
    return frame


def blob_kind(data: bytes) -> bytes:
    """Leading magic of a publish blob; raises on anything unknown."""
    magic = data[:5]
    if magic in (CLOUD_MAGIC, FRAME_MAGIC):
        return magic
    raise BadMagicError(f"unknown publish blob magic {magic!r}")


# -- anchors / metadata blobs ---------------------------------------------------

def encode_anchors(anchors: list) -> bytes:
    out = ANCHORS_MAGIC + bytes([FORMAT_BYTE]) + struct.pack("<I", len(anchors))
    for a in anchors:
        out += struct.pack("<I3f", a.id, *a.position)
    return out


def decode_anchors(data: bytes):
    from .store import Anchor  # local import to avoid a module cycle

    if data[:5] != ANCHORS_MAGIC:
        raise BadMagicError(f"bad anchors magic {data[:5]!r}")
    count = struct.unpack("<I", data[6:10])[0]
    if len(data) != 10 + 16 * count:
        raise LengthMismatchError("anchors blob length disagrees with its count")
    out = []
    for i in range(count):
        vals = struct.unpack_from("<I3f", data, 10 + 16 * i)
        out.append(Anchor(id=vals[0], position=tuple(vals[1:])))
    return out


def encode_metadata(meta: dict) -> bytes:
    out = META_MAGIC + bytes([FORMAT_BYTE]) + struct.pack("<I", len(meta))
    for key in sorted(meta):
        kb = str(key).encode("utf-8")
        vb = str(meta[key]).encode("utf-8")
        out += struct.pack("<HH", len(kb), len(vb)) + kb + vb
    return out


def decode_metadata(data: bytes) -> dict:
    if data[:5] != META_MAGIC:
        raise BadMagicError(f"bad metadata magic {data[:5]!r}")
    count = struct.unpack("<I", data[6:10])[0]
    pos = 10
    out = {}
    for _ in range(count):
        if pos + 4 > len(data):
            raise TruncatedError("metadata blob ends inside a record header")
        klen, vlen = struct.unpack_from("<HH", data, pos)
        pos += 4
        if pos + klen + vlen > len(data):
            raise TruncatedError("metadata blob ends inside a record")
        key = data[pos:pos + klen].decode("utf-8")
        pos += klen
        out[key] = data[pos:pos + vlen].decode("utf-8")
        pos += vlen
    if pos != len(data):
        raise LengthMismatchError("metadata blob carries trailing bytes")
    return out
