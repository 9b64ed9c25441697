"""Record-ID matching: phase one of every run.

Members ship their record-ID lists to the master, the master intersects
them with its own and fixes the canonical shared row order (lexicographic
sort, so the result is independent of arrival order and backend), then
broadcasts it. Every party finishes holding the identical shared order
plus a mapping from shared position to its own local row numbers.

IDs travel in plaintext by design; private set intersection is out of
scope and deliberately not approximated.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import IdListError, MatchingError
from .frame import MASTER, Message, PartyId
from .metrics import MetricRecord, MetricsSink, now_micros

METHOD_IDS = "ids"
METHOD_SHARED = "shared_ids"
_BLOB = "ids"


@dataclass(frozen=True)
class RecordIdList:
    """One party's record identifiers, validated on construction."""

    party: str
    ids: tuple[str, ...]

    def __post_init__(self) -> None:
        seen = set()
        for rid in self.ids:
            if not isinstance(rid, str) or rid == "":
                raise IdListError(f"party {self.party}: empty or non-string id {rid!r}")
            if "\n" in rid:
                raise IdListError(
                    f"party {self.party}: id {rid!r} contains a newline "
                    "(reserved as the wire separator)"
                )
            if rid in seen:
                raise IdListError(f"party {self.party}: duplicate id {rid!r}")
            seen.add(rid)


@dataclass(frozen=True)
class RowIndex:
    """Canonical shared order plus this party's local row positions."""

    shared_order: tuple[str, ...]
    local_pos: dict[str, int]

    def positions(self) -> list[int]:
        """Local row numbers in shared order, ready for select_rows."""
        return [self.local_pos[rid] for rid in self.shared_order]


def encode_ids(ids: tuple[str, ...] | list[str]) -> bytes:
    return "\n".join(ids).encode("utf-8")


def decode_ids(raw: bytes) -> tuple[str, ...]:
    if raw == b"":
        return ()
    return tuple(raw.decode("utf-8").split("\n"))


def intersect(lists: list[RecordIdList]) -> list[str]:
    """IDs present in every list, lexicographically sorted."""
    if len(lists) < 2:
        raise MatchingError(f"need at least 2 id lists to intersect, got {len(lists)}")
    common = set(lists[0].ids)
    for lst in lists[1:]:
        common &= set(lst.ids)
    return sorted(common)


def build_row_index(shared: list[str] | tuple[str, ...], local: RecordIdList) -> RowIndex:
    pos = {rid: i for i, rid in enumerate(local.ids)}
    local_pos = {}
    for rid in shared:
        if rid not in pos:
            raise MatchingError(
                f"party {local.party}: shared id {rid!r} missing from local data"
            )
        local_pos[rid] = pos[rid]
    return RowIndex(shared_order=tuple(shared), local_pos=local_pos)


def run_matching(comm, my_ids: RecordIdList, sink: MetricsSink | None = None) -> RowIndex:
    """Run the matching exchange for a master or member party.

    The master gathers "ids" from every member, intersects, logs the
    matched_rows metric, and broadcasts "shared_ids" to all peers
    (members and arbiter alike) before raising on an empty intersection,
    so each party aborts with a matching error rather than a timeout.
    """
    me = comm.my_id
    if me.role == "master":
        gathered = comm.gather(comm.members(), METHOD_IDS)
        lists = [my_ids]
        for msg in gathered:
            lists.append(RecordIdList(str(msg.sender), decode_ids(msg.blobs[_BLOB])))
        shared = intersect(lists)
        comm.broadcast(
            Message(method=METHOD_SHARED, sender=me, receiver=me,
                    blobs={_BLOB: encode_ids(shared)}),
            comm.peers(),
        )
        if sink is not None:
            sink.log_metric(MetricRecord(
                ts_unix_micros=now_micros(), party=me, epoch=0,
                name="matched_rows", value=float(len(shared)),
            ))
        if not shared:
            raise MatchingError("no record ids shared by all parties")
        return build_row_index(shared, my_ids)
    if me.role == "member":
        comm.send(Message(method=METHOD_IDS, sender=me, receiver=MASTER,
                          blobs={_BLOB: encode_ids(my_ids.ids)}))
        shared = recv_shared_order(comm)
        return build_row_index(shared, my_ids)
    raise MatchingError(f"role {me.role!r} holds no rows; use recv_shared_order")


def recv_shared_order(comm) -> tuple[str, ...]:
    """Receive the broadcast shared order (arbiter and member side)."""
    msg = comm.recv(MASTER, METHOD_SHARED)
    shared = decode_ids(msg.blobs[_BLOB])
    if not shared:
        raise MatchingError("no record ids shared by all parties")
    return shared
