"""MPI-like send/receive over two interchangeable backends.

The local backend moves messages between party threads through in-memory
queues; the wire backend moves the same frames over TCP. A protocol script
sees identical behavior either way: per-(sender, receiver) FIFO delivery,
selective receive by (sender, method), and the same event log (the local
backend round-trips every message through the frame codec so payload sizes
and validation match the wire byte for byte).
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass, field, replace

from .errors import AddressError, FrameError, RecvTimeout, TransportError
from .frame import Message, PartyId, decode_frame, encode_frame, read_frame
from .metrics import EventRecord, MetricsSink, TranscriptEntry, now_micros

DEFAULT_RECV_TIMEOUT_MS = 30_000
CONNECT_RETRIES = 5
CONNECT_BACKOFF_MS = 200


@dataclass
class CommunicatorConfig:
    """Backend selection plus addressing for the wire mode."""

    mode: str  # "local" | "wire"
    my_id: PartyId
    topology: list[tuple[PartyId, str, int]] = field(default_factory=list)
    recv_timeout_ms: int = DEFAULT_RECV_TIMEOUT_MS

    def __post_init__(self) -> None:
        if self.mode not in ("local", "wire"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "wire":
            parties = [p for p, _, _ in self.topology]
            if len(set(parties)) != len(parties):
                raise ValueError("duplicate party in topology")
            if self.my_id not in parties:
                raise ValueError(f"{self.my_id} missing from topology")
            seen: set[tuple[str, int]] = set()
            for _, host, port in self.topology:
                if (host, port) in seen:
                    raise ValueError(f"address {host}:{port} used twice")
                seen.add((host, port))


class _Inbox:
    """Buffered mailbox with selective take by (sender, method)."""

    def __init__(self) -> None:
        self._items: list[tuple[Message, int]] = []
        self._cv = threading.Condition()
        self._error: Exception | None = None
        self._next_seq: dict[tuple[PartyId, str], int] = {}

    def put(self, msg: Message, nbytes: int) -> None:
        with self._cv:
            key = (msg.sender, msg.method)
            expected = self._next_seq.get(key, 0)
            if msg.seq != expected:
                self._error = FrameError(
                    f"out-of-order seq {msg.seq} (expected {expected}) "
                    f"from {msg.sender} method {msg.method!r}"
                )
            else:
                self._next_seq[key] = expected + 1
                self._items.append((msg, nbytes))
            self._cv.notify_all()

    def fail(self, exc: Exception) -> None:
        with self._cv:
            self._error = exc
            self._cv.notify_all()

    def take(self, sender: PartyId, method: str, timeout_ms: int) -> tuple[Message, int]:
        deadline = time.monotonic() + timeout_ms / 1000.0
        with self._cv:
            while True:
                for i, (msg, nbytes) in enumerate(self._items):
                    if msg.sender == sender and msg.method == method:
                        del self._items[i]
                        return msg, nbytes
                if self._error is not None:
                    raise self._error
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise RecvTimeout(
                        f"timed out after {timeout_ms} ms waiting for "
                        f"method {method!r} from {sender}"
                    )
                self._cv.wait(remaining)


class _BaseCommunicator:
    def __init__(
        self,
        my_id: PartyId,
        parties: list[PartyId],
        sink: MetricsSink | None,
        recv_timeout_ms: int,
    ) -> None:
        self.my_id = my_id
        self.parties = sorted(parties, key=PartyId.sort_key)
        self.recv_timeout_ms = recv_timeout_ms
        self.transcript: list[TranscriptEntry] = []
        self._sink = sink
        self._seq: dict[tuple[PartyId, str], int] = {}
        self._seq_lock = threading.Lock()
        self._inbox = _Inbox()
        self._started = False

    # topology helpers used by protocols
    def peers(self) -> list[PartyId]:
        return [p for p in self.parties if p != self.my_id]

    def members(self) -> list[PartyId]:
        return [p for p in self.parties if p.role == "member"]

    def arbiter(self) -> PartyId | None:
        for p in self.parties:
            if p.role == "arbiter":
                return p
        return None

    def start(self) -> None:
        self._started = True

    def close(self) -> None:
        self._started = False

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def _transmit(self, msg: Message, frame: bytes) -> None:
        raise NotImplementedError

    def send(self, msg: Message) -> None:
        if not self._started:
            raise TransportError("communicator not started")
        if msg.receiver not in self.parties:
            raise AddressError(f"unknown receiver {msg.receiver}")
        if msg.sender != self.my_id:
            raise AddressError(f"sender {msg.sender} is not this party ({self.my_id})")
        t0 = time.monotonic_ns()
        with self._seq_lock:
            key = (msg.receiver, msg.method)
            seq = self._seq.get(key, 0)
            self._seq[key] = seq + 1
        stamped = replace(msg, seq=seq)
        frame = encode_frame(stamped)
        self._transmit(stamped, frame)
        self.transcript.append(
            TranscriptEntry(
                len(self.transcript), str(self.my_id), str(msg.receiver),
                msg.method, len(frame),
            )
        )
        if self._sink is not None:
            self._sink.log_event(
                EventRecord(
                    ts_unix_micros=now_micros(),
                    party=self.my_id,
                    direction="send",
                    peer=msg.receiver,
                    method=msg.method,
                    payload_bytes=len(frame),
                    duration_micros=(time.monotonic_ns() - t0) // 1000,
                )
            )

    def recv(self, sender: PartyId, method: str, timeout_ms: int | None = None) -> Message:
        if not self._started:
            raise TransportError("communicator not started")
        t0 = time.monotonic_ns()
        msg, nbytes = self._inbox.take(
            sender, method, self.recv_timeout_ms if timeout_ms is None else timeout_ms
        )
        if self._sink is not None:
            self._sink.log_event(
                EventRecord(
                    ts_unix_micros=now_micros(),
                    party=self.my_id,
                    direction="recv",
                    peer=sender,
                    method=method,
                    payload_bytes=nbytes,
                    duration_micros=(time.monotonic_ns() - t0) // 1000,
                )
            )
        return msg

    def broadcast(self, msg_template: Message, receivers: list[PartyId]) -> None:
        for r in sorted(receivers, key=PartyId.sort_key):
            self.send(replace(msg_template, receiver=r))

    def gather(
        self, senders: list[PartyId], method: str, timeout_ms: int | None = None
    ) -> list[Message]:
        budget = self.recv_timeout_ms if timeout_ms is None else timeout_ms
        deadline = time.monotonic() + budget / 1000.0
        out = []
        for s in sorted(senders, key=PartyId.sort_key):
            remaining = max(0, int((deadline - time.monotonic()) * 1000))
            try:
                out.append(self.recv(s, method, remaining))
            except RecvTimeout:
                raise RecvTimeout(
                    f"gather of method {method!r}: no message from {s}"
                ) from None
        return out


class LocalHub:
    """Shared mailboxes for all parties of one in-process run."""

    def __init__(self, parties: list[PartyId], record_frames: bool = False) -> None:
        self.parties = sorted(parties, key=PartyId.sort_key)
        self._inboxes = {p: _Inbox() for p in self.parties}
        self.frames: list[tuple[PartyId, PartyId, bytes]] | None = (
            [] if record_frames else None
        )
        self._frames_lock = threading.Lock()

    def deliver(self, sender: PartyId, receiver: PartyId, frame: bytes) -> None:
        if self.frames is not None:
            with self._frames_lock:
                self.frames.append((sender, receiver, frame))
        self._inboxes[receiver].put(decode_frame(frame), len(frame))

    def abort(self, reason: str) -> None:
        """Wake every pending recv with a transport error (a party died)."""
        for inbox in self._inboxes.values():
            inbox.fail(TransportError(f"run aborted: {reason}"))

    def communicator(
        self,
        my_id: PartyId,
        sink: MetricsSink | None = None,
        recv_timeout_ms: int = DEFAULT_RECV_TIMEOUT_MS,
    ) -> LocalCommunicator:
        return LocalCommunicator(self, my_id, sink, recv_timeout_ms)


class LocalCommunicator(_BaseCommunicator):
    """In-process backend: delivery through the hub's queues.

    Every message still passes through encode_frame/decode_frame so that
    logged payload sizes and validation behavior match the wire backend.
    """

    def __init__(
        self,
        hub: LocalHub,
        my_id: PartyId,
        sink: MetricsSink | None = None,
        recv_timeout_ms: int = DEFAULT_RECV_TIMEOUT_MS,
    ) -> None:
        if my_id not in hub.parties:
            raise AddressError(f"{my_id} not registered on hub")
        super().__init__(my_id, list(hub.parties), sink, recv_timeout_ms)
        self._hub = hub
        self._inbox = hub._inboxes[my_id]

    def _transmit(self, msg: Message, frame: bytes) -> None:
        self._hub.deliver(msg.sender, msg.receiver, frame)


class WireCommunicator(_BaseCommunicator):
    """TCP backend: one listener per party, lazily opened peer connections.

    Connections are dialed on first send and retried CONNECT_RETRIES times
    with linear CONNECT_BACKOFF_MS steps, so agents may start in any order.
    One connection per peer gives per-(sender, receiver) FIFO via TCP.
    """

    def __init__(self, config: CommunicatorConfig, sink: MetricsSink | None = None) -> None:
        if config.mode != "wire":
            raise ValueError("WireCommunicator needs a wire-mode config")
        parties = [p for p, _, _ in config.topology]
        super().__init__(config.my_id, parties, sink, config.recv_timeout_ms)
        self._addr = {p: (host, port) for p, host, port in config.topology}
        self._listener: socket.socket | None = None
        self._conns: dict[PartyId, tuple[socket.socket, threading.Lock]] = {}
        self._conn_lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self._running = False

    def start(self) -> None:
        host, port = self._addr[self.my_id]
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind(("", port))
            listener.listen(len(self.parties) + 2)
        except OSError as exc:
            listener.close()
            raise TransportError(f"cannot listen on {host}:{port}: {exc}") from None
        listener.settimeout(0.2)
        self._listener = listener
        self._running = True
        t = threading.Thread(target=self._accept_loop, name=f"{self.my_id}-accept", daemon=True)
        t.start()
        self._threads.append(t)
        super().start()

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while self._running:
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            t = threading.Thread(
                target=self._reader, args=(conn,), name=f"{self.my_id}-reader", daemon=True
            )
            t.start()
            self._threads.append(t)

    def _reader(self, conn: socket.socket) -> None:
        read_bytes = 0

        def read_exact(n: int) -> bytes:
            nonlocal read_bytes
            chunks = []
            got = 0
            while got < n:
                try:
                    chunk = conn.recv(min(65536, n - got))
                except OSError:
                    chunk = b""
                if not chunk:
                    raise _PeerClosed(mid_frame=read_bytes > 0 or got > 0)
                chunks.append(chunk)
                got += len(chunk)
                read_bytes += len(chunk)
            return b"".join(chunks)

        try:
            while self._running:
                read_bytes = 0
                frame = read_frame(read_exact)
                msg = decode_frame(frame)
                self._inbox.put(msg, len(frame))
        except _PeerClosed as closed:
            if closed.mid_frame and self._running:
                self._inbox.fail(FrameError("connection dropped mid-frame"))
        except (FrameError, struct.error) as exc:
            self._inbox.fail(FrameError(f"malformed frame from peer: {exc}"))
        finally:
            conn.close()

    def _get_conn(self, peer: PartyId) -> tuple[socket.socket, threading.Lock]:
        with self._conn_lock:
            cached = self._conns.get(peer)
            if cached is not None:
                return cached
            host, port = self._addr[peer]
            last_err: Exception | None = None
            for attempt in range(1 + CONNECT_RETRIES):
                if attempt:
                    time.sleep(CONNECT_BACKOFF_MS * attempt / 1000.0)
                try:
                    sock = socket.create_connection((host, port), timeout=5.0)
                    sock.settimeout(None)
                    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                    entry = (sock, threading.Lock())
                    self._conns[peer] = entry
                    return entry
                except OSError as exc:
                    last_err = exc
            raise TransportError(
                f"cannot reach {peer} at {host}:{port} after "
                f"{1 + CONNECT_RETRIES} attempts: {last_err}"
            )

    def _transmit(self, msg: Message, frame: bytes) -> None:
        sock, lock = self._get_conn(msg.receiver)
        host, port = self._addr[msg.receiver]
        try:
            with lock:
                sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send to {msg.receiver} at {host}:{port} failed: {exc}") from None

    def close(self) -> None:
        self._running = False
        super().close()
        with self._conn_lock:
            for sock, _ in self._conns.values():
                try:
                    sock.close()
                except OSError:
                    pass
            self._conns.clear()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=1.0)


class _PeerClosed(Exception):
    def __init__(self, mid_frame: bool) -> None:
        super().__init__("peer closed connection")
        self.mid_frame = mid_frame


def create_communicator(
    config: CommunicatorConfig,
    hub: LocalHub | None = None,
    sink: MetricsSink | None = None,
):
    if config.mode == "local":
        if hub is None:
            raise ValueError("local mode needs a LocalHub")
        return hub.communicator(config.my_id, sink, config.recv_timeout_ms)
    return WireCommunicator(config, sink)
