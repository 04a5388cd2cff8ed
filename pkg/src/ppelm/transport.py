"""Frame format and the two delivery backends.

A frame is a fixed 26-byte header followed by an opaque payload:

    magic    4 bytes   b"PELM"
    version  u8        currently 1
    type     u8        SETUP=1 ACCUM=2 RESULT=3 ABORT=4
    run_id   16 bytes
    length   u32 LE    payload byte count

The in-process backend is a deterministic mailbox: every frame is serialized
to bytes on send and parsed on delivery, so a simulated run and a socket run
exchange identical bytes and can be compared transcript-for-transcript. The
TCP backend gives each participant a listening server and opens one
short-lived connection per frame; frames belonging to different runs are
demultiplexed by run_id.
"""

import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    ConnectionLost,
    MalformedFrame,
    TransportFailure,
    TransportTimeout,
)
from .messages import MsgType

MAGIC = b"PELM"
VERSION = 1
RUN_ID_BYTES = 16
HEADER = struct.Struct("<4sBB16sI")
MAX_PAYLOAD = 1 << 30
DEFAULT_TIMEOUT = 30.0


class Role(Enum):
    MASTER = "master"
    MEMBER = "member"


@dataclass(frozen=True)
class PartyEndpoint:
    party_id: int
    address: str
    role: Role = Role.MEMBER


@dataclass(frozen=True)
class Frame:
    msg_type: int
    run_id: bytes
    payload: bytes = b""

    def __post_init__(self):
        if len(self.run_id) != RUN_ID_BYTES:
            raise ValueError(f"run_id must be {RUN_ID_BYTES} bytes")
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError("payload exceeds the size cap")

    def pack(self) -> bytes:
        return HEADER.pack(MAGIC, VERSION, self.msg_type, self.run_id,
                           len(self.payload)) + self.payload

    @classmethod
    def parse(cls, data: bytes) -> "Frame":
        """Parse one complete frame from a buffer; trailing bytes are an error."""
        if len(data) < HEADER.size:
            raise MalformedFrame(f"frame shorter than header ({len(data)} bytes)")
        magic, version, msg_type, run_id, length = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise MalformedFrame(f"bad magic {magic!r}")
        if version != VERSION:
            raise MalformedFrame(f"unsupported frame version {version}")
        if msg_type not in MsgType._value2member_map_:
            raise MalformedFrame(f"unknown message type {msg_type}")
        if length > MAX_PAYLOAD:
            raise MalformedFrame(f"declared payload of {length} bytes exceeds cap")
        if len(data) != HEADER.size + length:
            raise MalformedFrame(
                f"frame length {len(data)} does not match declared payload {length}"
            )
        return cls(MsgType(msg_type), run_id, data[HEADER.size:])


def split_address(address: str) -> tuple:
    host, sep, port = address.rpartition(":")
    if not sep or not host:
        raise TransportFailure(f"address {address!r} is not host:port")
    try:
        return host, int(port)
    except ValueError:
        raise TransportFailure(f"address {address!r} has a non-numeric port") from None


class MailboxNetwork:
    """Deterministic single-threaded frame switch for in-process runs.

    Runtimes register under string addresses. post() serializes the frame and
    appends it to one global FIFO; run() delivers in order, handing each
    parsed frame to its destination's handle() and posting whatever that
    returns. Taps observe every delivered frame as raw bytes, which is what
    the transcript and leak tests hook into.
    """

    def __init__(self):
        self._runtimes = {}
        self._pending = deque()
        self._taps = []
        self.drop_when = None  # callable (src, dst, data) -> bool, for fault tests

    def register(self, address: str, runtime) -> None:
        if address in self._runtimes:
            raise ValueError(f"address {address!r} already registered")
        self._runtimes[address] = runtime

    def tap(self, fn) -> None:
        self._taps.append(fn)

    def post(self, src: str, dst: str, frame: Frame) -> None:
        data = frame.pack()
        if self.drop_when is not None and self.drop_when(src, dst, data):
            return
        for fn in self._taps:
            fn(src, dst, data)
        self._pending.append((src, dst, data))

    def run(self) -> None:
        """Deliver frames until the network is quiet."""
        while self._pending:
            src, dst, data = self._pending.popleft()
            runtime = self._runtimes.get(dst)
            if runtime is None:
                raise TransportFailure(f"no runtime registered at {dst!r}")
            frame = Frame.parse(data)
            for nxt_dst, nxt_frame in runtime.handle(frame):
                self.post(dst, nxt_dst, nxt_frame)


def read_exact(sock: socket.socket, n: int, *, eof_ok: bool = False) -> bytes:
    """Read exactly n bytes; None on clean EOF at a frame boundary (eof_ok)."""
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout:
            raise TransportTimeout("socket read timed out") from None
        except OSError as exc:
            raise ConnectionLost(f"socket read failed: {exc}") from None
        if not chunk:
            if eof_ok and not buf:
                return None
            raise ConnectionLost(f"peer closed after {len(buf)} of {n} bytes")
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket):
    """Read one frame from a stream; None on clean EOF before any bytes."""
    head = read_exact(sock, HEADER.size, eof_ok=True)
    if head is None:
        return None
    magic, version, msg_type, run_id, length = HEADER.unpack(head)
    if magic != MAGIC:
        raise MalformedFrame(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedFrame(f"unsupported frame version {version}")
    if msg_type not in MsgType._value2member_map_:
        raise MalformedFrame(f"unknown message type {msg_type}")
    if length > MAX_PAYLOAD:
        raise MalformedFrame(f"declared payload of {length} bytes exceeds cap")
    payload = read_exact(sock, length) if length else b""
    return Frame(MsgType(msg_type), run_id, payload)


def send_frame(address: str, frame: Frame, timeout: float = DEFAULT_TIMEOUT) -> None:
    """Dial, write one frame, close. Raises instead of acking."""
    host, port = split_address(address)
    try:
        with socket.create_connection((host, port), timeout=timeout) as sock:
            sock.sendall(frame.pack())
    except socket.timeout:
        raise TransportTimeout(f"send to {address} timed out") from None
    except OSError as exc:
        raise ConnectionLost(f"send to {address} failed: {exc}") from None


class FrameServer:
    """Listening endpoint that sorts inbound frames into per-run queues.

    recv(run_id) claims that run's queue; recv_new_run() waits for a frame
    belonging to a run nobody has claimed yet, which is how a serving party
    picks up work. Frames for other runs are never lost, they sit in their
    queue until someone claims them.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, tap=None):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(64)
        self._host = host
        self._port = self._sock.getsockname()[1]
        self._tap = tap
        self._lock = threading.Condition()
        self._inboxes = {}
        self._claimed = set()
        self._closing = False
        self._thread = None

    @property
    def address(self) -> str:
        return f"{self._host}:{self._port}"

    def start(self) -> "FrameServer":
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()
        return self

    def close(self) -> None:
        self._closing = True
        try:
            self._sock.close()
        except OSError:
            pass
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def _accept_loop(self) -> None:
        # short accept timeout: close() just flips _closing, a blocked
        # accept() will not notice a closed fd on its own. Connections are
        # read to EOF one at a time, so frames are delivered in connect
        # order; senders dial one short-lived connection per frame.
        self._sock.settimeout(0.2)
        while not self._closing:
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            self._read_connection(conn)

    def _read_connection(self, conn: socket.socket) -> None:
        with conn:
            conn.settimeout(DEFAULT_TIMEOUT)
            try:
                while True:
                    frame = read_frame(conn)
                    if frame is None:
                        return
                    if self._tap is not None:
                        self._tap(self.address, frame.pack())
                    self._deliver(frame)
            except TransportFailure:
                # a malformed or truncated connection delivers nothing
                # further; already-complete frames stay delivered
                return

    def _deliver(self, frame: Frame) -> None:
        with self._lock:
            self._inboxes.setdefault(frame.run_id, deque()).append(frame)
            self._lock.notify_all()

    def recv(self, run_id: bytes, timeout: float = DEFAULT_TIMEOUT) -> Frame:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._lock:
            self._claimed.add(run_id)
            while True:
                box = self._inboxes.get(run_id)
                if box:
                    return box.popleft()
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise TransportTimeout(
                        f"no frame for run {run_id.hex()} within {timeout} s"
                    )
                self._lock.wait(remaining)

    def recv_new_run(self, timeout: float = None) -> Frame:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._lock:
            while True:
                for run_id, box in self._inboxes.items():
                    if box and run_id not in self._claimed:
                        self._claimed.add(run_id)
                        return box.popleft()
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise TransportTimeout(f"no new run within {timeout} s")
                self._lock.wait(remaining)

    def release_run(self, run_id: bytes) -> None:
        """Forget a finished run so its id can be reused by a later run."""
        with self._lock:
            self._claimed.discard(run_id)
            if not self._inboxes.get(run_id):
                self._inboxes.pop(run_id, None)
