"""Message envelope and the binary frame format.

Frame layout, byte-exact:

    magic   4 bytes      0x56 0x46 0x4C 0x31 ("VFL1")
    hlen    4 bytes      little-endian unsigned header length H
    header  H bytes      UTF-8 JSON: {"method", "sender": {"role", "index"},
                         "receiver": {"role", "index"}, "seq", "meta",
                         "tensors": [{"name", "rows", "cols", "offset",
                         "nbytes"}], "blobs": [{"name", "offset", "nbytes"}]}
    payload              each tensor's data as row-major little-endian
                         IEEE-754 float64, then each blob's raw bytes, in
                         header order, no padding

Offsets in the header are relative to the start of the payload section.
Header is capped at 16 MiB and payload at 1 GiB. decode_frame is the exact
inverse of encode_frame and rejects trailing bytes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import FrameError
from .tensor import Tensor

MAGIC = b"VFL1"
MAX_METHOD_BYTES = 32
MAX_HEADER_BYTES = 16 * 2**20
MAX_PAYLOAD_BYTES = 2**30

_ROLES = ("master", "member", "arbiter")
_ROLE_RANK = {r: i for i, r in enumerate(_ROLES)}


@dataclass(frozen=True)
class PartyId:
    """Identity of one agent: role plus member index (0 for master/arbiter)."""

    role: str
    index: int = 0

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.index < 0:
            raise ValueError("negative party index")
        if self.role != "member" and self.index != 0:
            raise ValueError(f"{self.role} always has index 0")

    def sort_key(self) -> tuple[int, int]:
        return (_ROLE_RANK[self.role], self.index)

    def __str__(self) -> str:
        return f"member{self.index}" if self.role == "member" else self.role

    @classmethod
    def parse(cls, s: str) -> PartyId:
        if s == "master" or s == "arbiter":
            return cls(s)
        if s.startswith("member") and s[6:].isdigit():
            return cls("member", int(s[6:]))
        raise ValueError(f"cannot parse party id {s!r}")


MASTER = PartyId("master")
ARBITER = PartyId("arbiter")


def member(i: int) -> PartyId:
    return PartyId("member", i)


@dataclass(frozen=True)
class Message:
    """Addressed envelope moved by communicators.

    `seq` is stamped by the sending communicator: it increases by one per
    (sender, receiver, method) stream, starting at 0.
    """

    method: str
    sender: PartyId
    receiver: PartyId
    seq: int = 0
    tensors: dict[str, Tensor] = field(default_factory=dict)
    blobs: dict[str, bytes] = field(default_factory=dict)
    meta: dict[str, str] = field(default_factory=dict)


def _check_method(method: str) -> None:
    if not method:
        raise FrameError("empty method tag")
    try:
        raw = method.encode("ascii")
    except UnicodeEncodeError:
        raise FrameError(f"method tag must be ASCII: {method!r}") from None
    if len(raw) > MAX_METHOD_BYTES:
        raise FrameError(f"method tag longer than {MAX_METHOD_BYTES} bytes")


def encode_frame(msg: Message) -> bytes:
    _check_method(msg.method)
    if msg.seq < 0:
        raise FrameError(f"negative seq {msg.seq}")

    tensor_entries = []
    offset = 0
    for name, t in msg.tensors.items():
        nbytes = t.rows * t.cols * 8
        tensor_entries.append(
            {"name": name, "rows": t.rows, "cols": t.cols, "offset": offset, "nbytes": nbytes}
        )
        offset += nbytes
    blob_entries = []
    for name, b in msg.blobs.items():
        blob_entries.append({"name": name, "offset": offset, "nbytes": len(b)})
        offset += len(b)
    if offset > MAX_PAYLOAD_BYTES:
        raise FrameError(f"payload {offset} bytes exceeds {MAX_PAYLOAD_BYTES}")

    header: dict[str, Any] = {
        "method": msg.method,
        "sender": {"role": msg.sender.role, "index": msg.sender.index},
        "receiver": {"role": msg.receiver.role, "index": msg.receiver.index},
        "seq": msg.seq,
        "meta": dict(msg.meta),
        "tensors": tensor_entries,
        "blobs": blob_entries,
    }
    raw_header = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    if len(raw_header) > MAX_HEADER_BYTES:
        raise FrameError(f"header {len(raw_header)} bytes exceeds {MAX_HEADER_BYTES}")

    parts = [MAGIC, struct.pack("<I", len(raw_header)), raw_header]
    for t in msg.tensors.values():
        parts.append(struct.pack(f"<{len(t.data)}d", *t.data))
    for b in msg.blobs.values():
        parts.append(b)
    return b"".join(parts)


def _header_dict(raw_header: bytes, at: int) -> dict[str, Any]:
    try:
        header = json.loads(raw_header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"unparseable header at byte {at}: {exc}") from None
    if not isinstance(header, dict) or set(header) != {
        "method", "sender", "receiver", "seq", "meta", "tensors", "blobs",
    }:
        raise FrameError(f"header fields wrong at byte {at}")
    return header


def _party_from_header(obj: Any, what: str) -> PartyId:
    if not isinstance(obj, dict) or set(obj) != {"role", "index"}:
        raise FrameError(f"malformed {what} party")
    try:
        return PartyId(obj["role"], obj["index"])
    except (ValueError, TypeError) as exc:
        raise FrameError(f"malformed {what} party: {exc}") from None


def decode_frame(b: bytes) -> Message:
    if len(b) < 8:
        raise FrameError(f"frame truncated at byte {len(b)}: shorter than fixed prefix")
    if b[:4] != MAGIC:
        raise FrameError(f"bad magic {b[:4]!r} at byte 0")
    (hlen,) = struct.unpack_from("<I", b, 4)
    if hlen > MAX_HEADER_BYTES:
        raise FrameError(f"header length {hlen} exceeds {MAX_HEADER_BYTES}")
    if len(b) < 8 + hlen:
        raise FrameError(f"frame truncated at byte {len(b)}: header needs {8 + hlen}")
    header = _header_dict(b[8 : 8 + hlen], 8)

    method = header["method"]
    if not isinstance(method, str):
        raise FrameError("method is not a string")
    _check_method(method)
    sender = _party_from_header(header["sender"], "sender")
    receiver = _party_from_header(header["receiver"], "receiver")
    seq = header["seq"]
    if not isinstance(seq, int) or seq < 0:
        raise FrameError(f"bad seq {seq!r}")
    meta = header["meta"]
    if not isinstance(meta, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
    ):
        raise FrameError("meta must map strings to strings")

    payload = b[8 + hlen :]
    pos = 0
    tensor_specs = []
    for entry in _entries(header["tensors"], ("name", "rows", "cols", "offset", "nbytes")):
        rows, cols = entry["rows"], entry["cols"]
        if not (isinstance(rows, int) and isinstance(cols, int)) or rows < 0 or cols < 0:
            raise FrameError(f"bad tensor shape {rows!r}x{cols!r}")
        if entry["nbytes"] != rows * cols * 8:
            raise FrameError(f"tensor {entry['name']!r} nbytes inconsistent with shape")
        if entry["offset"] != pos:
            raise FrameError(f"tensor {entry['name']!r} offset {entry['offset']} != {pos}")
        tensor_specs.append(entry)
        pos += entry["nbytes"]
    blob_specs = []
    for entry in _entries(header["blobs"], ("name", "offset", "nbytes")):
        if not isinstance(entry["nbytes"], int) or entry["nbytes"] < 0:
            raise FrameError(f"bad blob size {entry['nbytes']!r}")
        if entry["offset"] != pos:
            raise FrameError(f"blob {entry['name']!r} offset {entry['offset']} != {pos}")
        blob_specs.append(entry)
        pos += entry["nbytes"]
    if pos > MAX_PAYLOAD_BYTES:
        raise FrameError(f"payload {pos} bytes exceeds {MAX_PAYLOAD_BYTES}")

    if len(payload) < pos:
        raise FrameError(f"frame truncated at byte {len(b)}: payload needs {8 + hlen + pos}")
    if len(payload) > pos:
        raise FrameError(f"trailing garbage at byte {8 + hlen + pos}")

    tensors: dict[str, Tensor] = {}
    for entry in tensor_specs:
        name = entry["name"]
        if name in tensors:
            raise FrameError(f"duplicate tensor name {name!r}")
        count = entry["rows"] * entry["cols"]
        values = struct.unpack_from(f"<{count}d", payload, entry["offset"])
        for i, v in enumerate(values):
            if not math.isfinite(v):
                at = 8 + hlen + entry["offset"] + 8 * i
                raise FrameError(f"non-finite float in tensor {name!r} at byte {at}")
        tensors[name] = Tensor(entry["rows"], entry["cols"], values)
    blobs: dict[str, bytes] = {}
    for entry in blob_specs:
        name = entry["name"]
        if name in blobs:
            raise FrameError(f"duplicate blob name {name!r}")
        blobs[name] = bytes(payload[entry["offset"] : entry["offset"] + entry["nbytes"]])

    return Message(method, sender, receiver, seq, tensors, blobs, meta)


def _entries(obj: Any, keys: tuple[str, ...]) -> list[dict[str, Any]]:
    if not isinstance(obj, list):
        raise FrameError("tensor/blob index is not a list")
    out = []
    for entry in obj:
        if not isinstance(entry, dict) or set(entry) != set(keys):
            raise FrameError(f"malformed payload entry {entry!r}")
        if not isinstance(entry["name"], str):
            raise FrameError("payload entry name is not a string")
        if not isinstance(entry["offset"], int) or entry["offset"] < 0:
            raise FrameError(f"bad offset {entry['offset']!r}")
        out.append(entry)
    return out


def read_frame(read_exact: Callable[[int], bytes]) -> bytes:
    """Assemble one full frame from a blocking exact-read callback.

    Used by the TCP backend to delimit frames on a stream. The returned
    bytes still go through decode_frame for full validation.
    """
    prefix = read_exact(8)
    if prefix[:4] != MAGIC:
        raise FrameError(f"bad magic {prefix[:4]!r} at byte 0")
    (hlen,) = struct.unpack_from("<I", prefix, 4)
    if hlen > MAX_HEADER_BYTES:
        raise FrameError(f"header length {hlen} exceeds {MAX_HEADER_BYTES}")
    raw_header = read_exact(hlen)
    header = _header_dict(raw_header, 8)
    size = 0
    for section in ("tensors", "blobs"):
        entries = header[section]
        if not isinstance(entries, list):
            raise FrameError(f"{section} index is not a list")
        for entry in entries:
            if not isinstance(entry, dict) or not isinstance(entry.get("nbytes"), int):
                raise FrameError(f"malformed payload entry {entry!r}")
            size += entry["nbytes"]
    if size > MAX_PAYLOAD_BYTES or size < 0:
        raise FrameError(f"payload {size} bytes exceeds {MAX_PAYLOAD_BYTES}")
    return prefix + raw_header + read_exact(size)
