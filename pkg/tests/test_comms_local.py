"""In-process backend: FIFO, selective receive, seq checks, failure wakeups."""

import threading

import pytest

from vflkit.comms import LocalHub
from vflkit.errors import AddressError, FrameError, RecvTimeout, TransportError
from vflkit.frame import MASTER, Message, encode_frame, member
from vflkit.metrics import MetricsSink
from runutil import drive, party_ids_for


def test_send_recv_roundtrip_with_seq_stamping():
    parties = party_ids_for(1)
    hub = LocalHub(parties)

    def body(comm, pid):
        if pid == MASTER:
            for i in range(3):
                comm.send(Message("batch", MASTER, member(0),
                                  meta={"i": str(i)}))
            return None
        seen = [comm.recv(MASTER, "batch") for _ in range(3)]
        return seen

    results, _ = drive(parties, body)
    seen = results[member(0)]
    assert [m.seq for m in seen] == [0, 1, 2]
    assert [m.meta["i"] for m in seen] == ["0", "1", "2"]


def test_selective_recv_by_method_and_sender():
    parties = party_ids_for(2)
    hub_order = []

    def body(comm, pid):
        if pid == member(0):
            comm.send(Message("a", pid, MASTER, blobs={"v": b"m0a"}))
            comm.send(Message("b", pid, MASTER, blobs={"v": b"m0b"}))
        elif pid == member(1):
            comm.send(Message("a", pid, MASTER, blobs={"v": b"m1a"}))
        else:
            # take out of arrival order on purpose
            got_b = comm.recv(member(0), "b")
            got_a1 = comm.recv(member(1), "a")
            got_a0 = comm.recv(member(0), "a")
            hub_order.extend([got_b.blobs["v"], got_a1.blobs["v"], got_a0.blobs["v"]])

    drive(parties, body)
    assert hub_order == [b"m0b", b"m1a", b"m0a"]


def test_gather_returns_ascending_member_order():
    parties = party_ids_for(3)

    def body(comm, pid):
        if pid == MASTER:
            msgs = comm.gather(comm.members(), "u")
            return [str(m.sender) for m in msgs]
        comm.send(Message("u", pid, MASTER))
        return None

    results, _ = drive(parties, body)
    assert results[MASTER] == ["member0", "member1", "member2"]


def test_broadcast_hits_every_receiver():
    parties = party_ids_for(2)

    def body(comm, pid):
        if pid == MASTER:
            comm.broadcast(Message("batch", MASTER, MASTER, blobs={"x": b"42"}),
                           comm.members())
            return None
        return comm.recv(MASTER, "batch").blobs["x"]

    results, _ = drive(parties, body)
    assert results[member(0)] == b"42"
    assert results[member(1)] == b"42"


def test_recv_timeout_names_method_and_sender():
    hub = LocalHub(party_ids_for(1))
    comm = hub.communicator(MASTER)
    with comm:
        with pytest.raises(RecvTimeout, match=r"'partial_pred' from member0"):
            comm.recv(member(0), "partial_pred", timeout_ms=30)


def test_gather_timeout_names_missing_party():
    hub = LocalHub(party_ids_for(2))
    master = hub.communicator(MASTER)
    m0 = hub.communicator(member(0))
    with master, m0:
        m0.send(Message("u", member(0), MASTER))
        with pytest.raises(RecvTimeout, match="member1"):
            master.gather(master.members(), "u", timeout_ms=60)


def test_address_validation():
    hub = LocalHub(party_ids_for(1))
    comm = hub.communicator(MASTER)
    with comm:
        with pytest.raises(AddressError):
            comm.send(Message("x", MASTER, member(5)))
        with pytest.raises(AddressError):
            comm.send(Message("x", member(0), MASTER))
    with pytest.raises(AddressError):
        hub.communicator(member(9))


def test_send_before_start_rejected():
    hub = LocalHub(party_ids_for(1))
    comm = hub.communicator(MASTER)
    with pytest.raises(TransportError):
        comm.send(Message("x", MASTER, member(0)))


def test_out_of_order_seq_detected_on_receive():
    parties = party_ids_for(1)
    hub = LocalHub(parties)
    receiver = hub.communicator(member(0))
    with receiver:
        forged = Message("batch", MASTER, member(0), seq=5)
        hub.deliver(MASTER, member(0), encode_frame(forged))
        with pytest.raises(FrameError, match="out-of-order seq 5"):
            receiver.recv(MASTER, "batch", timeout_ms=100)


def test_seq_streams_are_per_method():
    parties = party_ids_for(1)

    def body(comm, pid):
        if pid == MASTER:
            comm.send(Message("a", MASTER, member(0)))
            comm.send(Message("b", MASTER, member(0)))
            comm.send(Message("a", MASTER, member(0)))
            return None
        first_b = comm.recv(MASTER, "b")
        a0 = comm.recv(MASTER, "a")
        a1 = comm.recv(MASTER, "a")
        return (first_b.seq, a0.seq, a1.seq)

    results, _ = drive(parties, body)
    assert results[member(0)] == (0, 0, 1)


def test_abort_wakes_blocked_receivers():
    parties = party_ids_for(1)
    hub = LocalHub(parties)
    comm = hub.communicator(member(0))
    errors = []

    def blocked():
        try:
            with comm:
                comm.recv(MASTER, "batch", timeout_ms=5000)
        except TransportError as exc:
            errors.append(str(exc))

    t = threading.Thread(target=blocked)
    t.start()
    hub.abort("master failed: boom")
    t.join(timeout=2)
    assert not t.is_alive()
    assert errors and "master failed: boom" in errors[0]


def test_buffered_message_still_readable_after_failure():
    # a queued message that matches must win over a stored error
    hub = LocalHub(party_ids_for(1))
    sender = hub.communicator(MASTER)
    receiver = hub.communicator(member(0))
    with sender, receiver:
        sender.send(Message("batch", MASTER, member(0), blobs={"x": b"ok"}))
        hub.abort("late failure")
        assert receiver.recv(MASTER, "batch").blobs["x"] == b"ok"
        with pytest.raises(TransportError):
            receiver.recv(MASTER, "batch", timeout_ms=50)


def test_transcript_and_event_log(tmp_path):
    parties = party_ids_for(1)
    sinks = {p: MetricsSink(tmp_path, "t", p) for p in parties}

    def body(comm, pid):
        if pid == MASTER:
            comm.send(Message("batch", MASTER, member(0), blobs={"i": b"0123"}))
            return comm.transcript
        comm.recv(MASTER, "batch")
        return comm.transcript

    results, _ = drive(parties, body, sinks=sinks)
    for sink in sinks.values():
        sink.close()

    sent = results[MASTER]
    assert len(sent) == 1
    entry = sent[0]
    assert (entry.step, entry.sender, entry.receiver, entry.method) == \
        (0, "master", "member0", "batch")
    assert results[member(0)] == []  # transcript holds sends only

    events = (tmp_path / "t.master.events.jsonl").read_text().strip().splitlines()
    assert len(events) == 1
    recv_events = (tmp_path / "t.member0.events.jsonl").read_text().strip().splitlines()
    assert len(recv_events) == 1
