"""Two-party framed channels with byte/round accounting.

Wire frame: ``length:u32be | type:u8 | payload`` where ``length`` counts the
payload only, so an empty frame is 5 bytes on the wire.

A *round* is one matched send+recv on an endpoint: the counter advances when
a frame is received after at least one frame was sent since the previous
receive. The pair reports the larger of its two endpoint counters.
"""
from __future__ import annotations

import enum
import os
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

from .errors import ChannelClosedError, ConfigError, ProtocolError

HEADER = struct.Struct(">IB")
MAX_PAYLOAD = 2**31


class MsgType(enum.IntEnum):
    SHARE_UPLOAD = 1
    TRIPLE_BLOCK = 2
    AND_OPEN = 3
    OPEN_INDEX = 4
    RESULT = 5


@dataclass(frozen=True)
class NetConfig:
    bandwidth: float = 1e9  # bits per second
    rtt: float = 1e-3  # seconds

    def __post_init__(self):
        if not (self.bandwidth > 0 and self.rtt > 0):
            raise ConfigError(f"bandwidth and rtt must be positive, got {self}")

    @classmethod
    def from_flags(cls, bandwidth_bps=None, rtt_ms=None) -> "NetConfig":
        kw = {}
        if bandwidth_bps is not None:
            kw["bandwidth"] = float(bandwidth_bps)
        if rtt_ms is not None:
            kw["rtt"] = float(rtt_ms) / 1000.0
        return cls(**kw)


@dataclass
class ChannelStats:
    rounds: int = 0
    bytes_sent: list = field(default_factory=lambda: [0, 0])
    wall_time: float = 0.0

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes_sent)

    def __sub__(self, other: "ChannelStats") -> "ChannelStats":
        return ChannelStats(
            self.rounds - other.rounds,
            [a - b for a, b in zip(self.bytes_sent, other.bytes_sent)],
            self.wall_time - other.wall_time,
        )

    def __add__(self, other: "ChannelStats") -> "ChannelStats":
        return ChannelStats(
            self.rounds + other.rounds,
            [a + b for a, b in zip(self.bytes_sent, other.bytes_sent)],
            self.wall_time + other.wall_time,
        )


def simulated_time(stats: ChannelStats, config: NetConfig) -> float:
    """Network time for a session: one RTT per lockstep round plus serialisation
    of every byte sent by either party at the configured bandwidth."""
    return stats.rounds * config.rtt + stats.total_bytes * 8 / config.bandwidth


def encode_frame(msg_type: int, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"frame payload of {len(payload)} bytes exceeds 2^31")
    return HEADER.pack(len(payload), int(msg_type)) + payload


class FrameDecoder:
    """Reassembles frames from arbitrarily split byte chunks."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list[tuple[int, bytes]]:
        self._buf += chunk
        frames = []
        while len(self._buf) >= HEADER.size:
            length, msg_type = HEADER.unpack_from(self._buf)
            if length > MAX_PAYLOAD:
                raise ProtocolError(f"declared frame length {length} exceeds 2^31")
            end = HEADER.size + length
            if len(self._buf) < end:
                break
            frames.append((msg_type, bytes(self._buf[HEADER.size:end])))
            del self._buf[:end]
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)


class Endpoint:
    """One party's end of a framed channel."""

    def __init__(self, party: int, record: bool = False):
        self.party = party
        self.bytes_sent = 0
        self.bytes_received = 0
        self.frames_sent = 0
        self.rounds = 0
        self.wall_time = 0.0
        self.transcript: list[tuple[str, int, bytes]] | None = [] if record else None
        self._sent_since_recv = False
        self._closed = False

    # subclasses implement raw byte movement
    def _write(self, wire: bytes) -> None:
        raise NotImplementedError

    def _read_frame(self, timeout) -> tuple[int, bytes]:
        raise NotImplementedError

    def send_frame(self, msg_type: int, payload: bytes = b"") -> None:
        if self._closed:
            raise ChannelClosedError("send on closed endpoint")
        wire = encode_frame(msg_type, payload)
        t0 = time.perf_counter()
        self._write(wire)
        self.wall_time += time.perf_counter() - t0
        self.bytes_sent += len(wire)
        self.frames_sent += 1
        self._sent_since_recv = True
        if self.transcript is not None:
            self.transcript.append(("send", int(msg_type), bytes(payload)))

    def recv_frame(self, timeout: float | None = None) -> tuple[int, bytes]:
        if self._closed:
            raise ChannelClosedError("recv on closed endpoint")
        t0 = time.perf_counter()
        msg_type, payload = self._read_frame(timeout)
        self.wall_time += time.perf_counter() - t0
        self.bytes_received += HEADER.size + len(payload)
        if self._sent_since_recv:
            self.rounds += 1
            self._sent_since_recv = False
        if self.transcript is not None:
            self.transcript.append(("recv", msg_type, payload))
        return msg_type, payload

    def close(self) -> None:
        self._closed = True


_CLOSED = object()


class InprocEndpoint(Endpoint):
    def __init__(self, party, inbox: queue.SimpleQueue, outbox: queue.SimpleQueue, record=False):
        super().__init__(party, record)
        self._inbox = inbox
        self._outbox = outbox
        self._decoder = FrameDecoder()
        self._ready: list[tuple[int, bytes]] = []

    def _write(self, wire: bytes) -> None:
        self._outbox.put(wire)

    def _read_frame(self, timeout):
        while not self._ready:
            try:
                if timeout == 0:
                    chunk = self._inbox.get_nowait()
                else:
                    chunk = self._inbox.get(timeout=timeout)
            except queue.Empty:
                raise ProtocolError(f"party {self.party}: no frame available") from None
            if chunk is _CLOSED:
                self._closed = True
                raise ChannelClosedError("peer closed the channel")
            self._ready.extend(self._decoder.feed(chunk))
        return self._ready.pop(0)

    def close(self):
        if not self._closed:
            self._outbox.put(_CLOSED)
        super().close()


class SocketEndpoint(Endpoint):
    def __init__(self, party, sock: socket.socket, record=False):
        super().__init__(party, record)
        self._sock = sock
        self._decoder = FrameDecoder()
        self._ready: list[tuple[int, bytes]] = []

    def _write(self, wire: bytes) -> None:
        try:
            self._sock.sendall(wire)
        except OSError as exc:
            raise ChannelClosedError(f"socket send failed: {exc}") from exc

    def _read_frame(self, timeout):
        self._sock.settimeout(timeout)
        while not self._ready:
            try:
                chunk = self._sock.recv(1 << 20)
            except socket.timeout:
                raise ProtocolError(f"party {self.party}: recv timed out") from None
            except OSError as exc:
                raise ChannelClosedError(f"socket recv failed: {exc}") from exc
            if not chunk:
                self._closed = True
                raise ChannelClosedError("peer closed the connection")
            self._ready.extend(self._decoder.feed(chunk))
        return self._ready.pop(0)

    def close(self):
        if not self._closed:
            try:
                self._sock.close()
            except OSError:
                pass
        super().close()


class ChannelPair:
    """Both endpoints of a two-party session plus aggregate accounting."""

    def __init__(self, ends: tuple[Endpoint, Endpoint], config: NetConfig, mode: str):
        self.ends = ends
        self.config = config
        self.mode = mode

    def __iter__(self):
        return iter(self.ends)

    def __getitem__(self, i) -> Endpoint:
        return self.ends[i]

    def stats(self) -> ChannelStats:
        return ChannelStats(
            rounds=max(e.rounds for e in self.ends),
            bytes_sent=[e.bytes_sent for e in self.ends],
            wall_time=max(e.wall_time for e in self.ends),
        )

    def simulated_time(self) -> float:
        return simulated_time(self.stats(), self.config)

    def close(self) -> None:
        for e in self.ends:
            e.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def resolve_mode(mode: str | None) -> str:
    mode = mode or os.environ.get("VC_NET_MODE") or "inproc"
    if mode not in ("inproc", "socket"):
        raise ConfigError(f"unknown net mode {mode!r}; expected inproc or socket")
    return mode


def connect_pair(config: NetConfig | None = None, mode: str | None = None,
                 record: bool = False) -> ChannelPair:
    """Open a fresh two-party channel. ``VC_NET_MODE`` overrides a missing mode."""
    config = config or NetConfig()
    mode = resolve_mode(mode)
    if mode == "inproc":
        q01, q10 = queue.SimpleQueue(), queue.SimpleQueue()
        ends = (InprocEndpoint(0, q10, q01, record), InprocEndpoint(1, q01, q10, record))
        return ChannelPair(ends, config, mode)

    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        listener.bind(("127.0.0.1", 0))
        listener.listen(1)
        client = socket.create_connection(listener.getsockname())
        server, _ = listener.accept()
    except OSError as exc:
        raise ChannelClosedError(f"could not set up socket pair: {exc}") from exc
    finally:
        listener.close()
    for s in (client, server):
        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return ChannelPair((SocketEndpoint(0, client, record), SocketEndpoint(1, server, record)),
                       config, mode)


def run_threads(*targets):
    """Run callables in separate threads; re-raise the first failure."""
    results = [None] * len(targets)
    errors: list[BaseException | None] = [None] * len(targets)

    def wrap(i, fn):
        try:
            results[i] = fn()
        except BaseException as exc:  # propagated below
            errors[i] = exc

    threads = [threading.Thread(target=wrap, args=(i, fn), daemon=True)
               for i, fn in enumerate(targets)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for exc in errors:
        if exc is not None:
            raise exc
    return results
