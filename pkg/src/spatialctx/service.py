"""Observation-sharing service: a store server speaking the framed wire
protocol over either an in-memory channel or a real TCP socket.

Every client message gets exactly one reply: SNAPSHOT on success (for
publishes it carries the new version and an empty cloud; for fetches the
full shared cloud), ERROR otherwise.  Semantic errors (sequence
violations, access denials, unsupported kinds, voxel mismatches) leave
the connection open; an unparseable frame closes it, because frame
resynchronization is not attempted.  Sessions are independent: one
client's errors never disturb another's connection.
"""

from __future__ import annotations

import os
import socket
import threading

from . import wire
from .geometry import PointCloud, RGBDFrame
from .store import AccessDeniedError, ContextKey, ContextKind, ContextStore, UnknownKeyError
from .wire import (
    ERR_ACCESS_DENIED,
    ERR_BAD_PAYLOAD,
    ERR_MALFORMED,
    ERR_SEQUENCE,
    ERR_UNSUPPORTED_KIND,
    ERR_VOXEL_MISMATCH,
    ErrorMsg,
    FetchMsg,
    FrameReader,
    HelloMsg,
    Message,
    ProtocolError,
    PublishMsg,
    SnapshotMsg,
    decode_cloud,
    decode_frame_blob,
    encode,
    encode_cloud,
)

DEFAULT_ENDPOINT = "127.0.0.1:7707"
ENDPOINT_ENV_VAR = "SPATIALCTX_ENDPOINT"

__all__ = [
    "ServerCore",
    "ConnectionHandler",
    "InMemoryTransport",
    "LoopbackChannel",
    "SocketServer",
    "connect_socket",
    "Client",
    "ServiceError",
    "resolve_endpoint",
]


def resolve_endpoint(explicit: str | None = None) -> tuple[str, int]:
    """Endpoint from an explicit flag, the environment, or the default."""
    text = explicit or os.environ.get(ENDPOINT_ENV_VAR) or DEFAULT_ENDPOINT
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {text!r}")
    return host, int(port)


class ServerCore:
    """Protocol logic shared by every transport."""

    def __init__(self, store: ContextStore):
        self.store = store

    def open_connection(self) -> "ConnectionHandler":
        return ConnectionHandler(self)

    def _empty_blob(self) -> bytes:
        return encode_cloud(PointCloud.empty(self.store.voxel_size))

    def handle(self, msg: Message, session: "ConnectionHandler") -> tuple[Message, bool]:
        if isinstance(msg, HelloMsg):
            session.user = msg.user_id
            version, _ = self.store.shared_cloud()
            return SnapshotMsg(version=version, blob=self._empty_blob()), False
        if session.user is None:
            return ErrorMsg(ERR_SEQUENCE, "HELLO must precede other messages"), False
        if isinstance(msg, PublishMsg):
            return self._handle_publish(msg, session), False
        if isinstance(msg, FetchMsg):
            return self._handle_fetch(msg, session), False
        return ErrorMsg(ERR_SEQUENCE, "message type is server-to-client only"), False

    def _handle_publish(self, msg: PublishMsg, session: "ConnectionHandler") -> Message:
        try:
            kind = wire.blob_kind(msg.blob)
            if kind == wire.FRAME_MAGIC:
                frame = decode_frame_blob(msg.blob)
                version = self.store.ingest_observation(frame)
            else:
                cloud = decode_cloud(msg.blob, user_id=session.user)
                if cloud.voxel_size != self.store.voxel_size:
                    return ErrorMsg(
                        ERR_VOXEL_MISMATCH,
                        f"store voxel size is {self.store.voxel_size}, blob has {cloud.voxel_size}",
                    )
                version = self.store.ingest_cloud(cloud)
        except ProtocolError as exc:
            return ErrorMsg(ERR_BAD_PAYLOAD, str(exc))
        except ValueError as exc:
            return ErrorMsg(ERR_BAD_PAYLOAD, str(exc))
        return SnapshotMsg(version=version, blob=self._empty_blob())

    def _handle_fetch(self, msg: FetchMsg, session: "ConnectionHandler") -> Message:
        if msg.kind != ContextKind.SPARSE_POINT_CLOUD:
            return ErrorMsg(ERR_UNSUPPORTED_KIND, f"kind {msg.kind} is not fetchable over the wire")
        key = ContextKey(ContextKind.SPARSE_POINT_CLOUD)
        try:
            entry = self.store.get(key, requester=session.user)
        except UnknownKeyError:
            return SnapshotMsg(version=0, blob=self._empty_blob())
        except AccessDeniedError as exc:
            return ErrorMsg(ERR_ACCESS_DENIED, str(exc))
        return SnapshotMsg(version=entry.version, blob=encode_cloud(entry.payload))


class ConnectionHandler:
    """One client session: stream parsing, HELLO state, and replies."""

    def __init__(self, core: ServerCore):
        self.core = core
        self.reader = FrameReader()
        self.user: int | None = None

    def feed(self, data: bytes) -> tuple[bytes, bool]:
        """Process incoming bytes; returns (reply bytes, close flag)."""
        try:
            messages = self.reader.feed(data)
        except ProtocolError as exc:
            return encode(ErrorMsg(ERR_MALFORMED, str(exc))), True
        out = bytearray()
        for msg in messages:
            try:
                reply, close = self.core.handle(msg, self)
            except Exception as exc:  # a session must never take the server down
                out += encode(ErrorMsg(ERR_MALFORMED, f"internal error: {exc}"))
                return bytes(out), True
            out += encode(reply)
            if close:
                return bytes(out), True
        return bytes(out), False


# -- transports -----------------------------------------------------------------


class LoopbackChannel:
    """Deterministic in-process connection to a server core."""

    def __init__(self, core: ServerCore):
        self._handler = core.open_connection()
        self._reader = FrameReader()
        self._inbox: list[Message] = []
        self.closed = False

    def request(self, data: bytes) -> Message:
        if self.closed:
            raise ConnectionError("connection already closed by the server")
        replies, close = self._handler.feed(data)
        self._inbox.extend(self._reader.feed(replies))
        if close:
            self.closed = True
        if not self._inbox:
            raise ConnectionError("server closed the connection without a reply")
        return self._inbox.pop(0)

    def close(self):
        self.closed = True


class InMemoryTransport:
    """Simulated network around one server core; ``connect`` returns an
    independent session channel."""

    def __init__(self, store: ContextStore):
        self.core = ServerCore(store)

    def connect(self) -> LoopbackChannel:
        return LoopbackChannel(self.core)


class SocketChannel:
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._reader = FrameReader()
        self._inbox: list[Message] = []

    def request(self, data: bytes) -> Message:
        self._sock.sendall(data)
        while not self._inbox:
            chunk = self._sock.recv(65536)
            if not chunk:
                raise ConnectionError("server closed the connection")
            self._inbox.extend(self._reader.feed(chunk))
        return self._inbox.pop(0)

    def send_raw(self, data: bytes):
        self._sock.sendall(data)

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


def connect_socket(host: str, port: int, timeout: float = 10.0) -> SocketChannel:
    sock = socket.create_connection((host, port), timeout=timeout)
    return SocketChannel(sock)


class SocketServer:
    """TCP front end over a server core; one thread per connection."""

    def __init__(self, store: ContextStore, host: str = "127.0.0.1", port: int = 0):
        self.core = ServerCore(store)
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen()
        self.host, self.port = self._listener.getsockname()
        self._running = False
        self._threads: list[threading.Thread] = []
        self._accept_thread: threading.Thread | None = None

    def start(self):
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self):
        while self._running:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve_connection, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_connection(self, conn: socket.socket):
        handler = self.core.open_connection()
        try:
            while True:
                data = conn.recv(65536)
                if not data:
                    return
                replies, close = handler.feed(data)
                if replies:
                    conn.sendall(replies)
                if close:
                    return
        except OSError:
            return
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def stop(self):
        self._running = False
        try:
            self._listener.close()
        except OSError:
            pass

    def serve_forever(self):
        """Blocking accept loop for the command-line ``serve`` mode."""
        self._running = True
        try:
            self._accept_loop()
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()


# -- client -----------------------------------------------------------------------


class ServiceError(RuntimeError):
    def __init__(self, code: int, detail: str):
        super().__init__(f"server error {code}: {detail}")
        self.code = code
        self.detail = detail


class Client:
    """Convenience wrapper: HELLO handshake, publishing, and fetching."""

    def __init__(self, channel):
        self.channel = channel

    def _request(self, msg: Message) -> Message:
        reply = self.channel.request(encode(msg))
        if isinstance(reply, ErrorMsg):
            raise ServiceError(reply.code, reply.detail)
        return reply

    def hello(self, user_id: int) -> int:
        reply = self._request(HelloMsg(user_id=user_id))
        return reply.version

    def publish_frame(self, frame: RGBDFrame) -> int:
        reply = self._request(PublishMsg(blob=wire.encode_frame_blob(frame)))
        return reply.version

    def publish_cloud(self, cloud: PointCloud) -> int:
        reply = self._request(PublishMsg(blob=encode_cloud(cloud)))
        return reply.version

    def fetch(self, kind: int = ContextKind.SPARSE_POINT_CLOUD) -> tuple[int, PointCloud]:
        reply = self._request(FetchMsg(kind=kind))
        return reply.version, decode_cloud(reply.blob)

    def fetch_raw(self, kind: int = ContextKind.SPARSE_POINT_CLOUD) -> SnapshotMsg:
        """Fetch without decoding; used for byte-level comparisons."""
        return self._request(FetchMsg(kind=kind))
