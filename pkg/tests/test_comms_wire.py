"""TCP backend: behavior and byte-level parity with the local backend."""

import socket
import threading
import time

import pytest

import vflkit.comms as comms
from vflkit.comms import CommunicatorConfig, LocalHub, WireCommunicator
from vflkit.errors import FrameError, RecvTimeout, TransportError
from vflkit.frame import MASTER, Message, encode_frame, member
from vflkit.tensor import Tensor
from runutil import drive, free_ports, party_ids_for


def wire_pair(parties, ports=None):
    ports = ports or free_ports(len(parties))
    topology = [(p, "127.0.0.1", port) for p, port in zip(parties, ports)]
    return {
        p: WireCommunicator(
            CommunicatorConfig(mode="wire", my_id=p, topology=topology)
        )
        for p in parties
    }


def run_script(comm_by_party, body):
    results = {}
    errors = {}

    def work(pid):
        comm = comm_by_party[pid]
        try:
            with comm:
                results[pid] = body(comm, pid)
        except Exception as exc:  # surfaced below
            errors[pid] = exc

    threads = [threading.Thread(target=work, args=(p,)) for p in comm_by_party]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise next(iter(errors.values()))
    return results


def exchange_script(comm, pid):
    """Two request/reply rounds plus a one-way blob; returns what was seen."""
    seen = []
    if pid == MASTER:
        for i in range(2):
            comm.send(Message(
                "batch", MASTER, member(0),
                tensors={"d": Tensor(2, 1, (1.5 * i, -2.25))},
                blobs={"idx": bytes(range(4 * (i + 1)))},
            ))
            reply = comm.recv(member(0), "partial_pred")
            seen.append((reply.seq, reply.tensors["u"].data))
        comm.send(Message("residual", MASTER, member(0), meta={"last": "yes"}))
    else:
        for i in range(2):
            got = comm.recv(MASTER, "batch")
            seen.append((got.seq, got.tensors["d"].data, got.blobs["idx"]))
            comm.send(Message("partial_pred", pid, MASTER,
                              tensors={"u": Tensor(1, 1, (float(i),))}))
        seen.append(comm.recv(MASTER, "residual").meta["last"])
    return seen


def test_wire_roundtrip_and_local_parity():
    parties = party_ids_for(1)
    wire_results = run_script(wire_pair(parties), exchange_script)
    local_results, _ = drive(parties, exchange_script)
    assert wire_results == local_results

    # transcripts (method, sizes) must agree byte for byte across backends
    wire_comms = wire_pair(parties)
    wire_tr = run_script(
        wire_comms, lambda c, p: (exchange_script(c, p), c.transcript)[1]
    )
    local_tr, _ = drive(
        parties, lambda c, p: (exchange_script(c, p), c.transcript)[1]
    )
    assert wire_tr == local_tr


def test_wire_three_parties_gather():
    parties = party_ids_for(2)

    def body(comm, pid):
        if pid == MASTER:
            return [m.blobs["v"] for m in comm.gather(comm.members(), "u")]
        comm.send(Message("u", pid, MASTER, blobs={"v": str(pid).encode()}))
        return None

    results = run_script(wire_pair(parties), body)
    assert results[MASTER] == [b"member0", b"member1"]


def test_listen_conflict_raises_transport_error():
    parties = party_ids_for(1)
    (port,) = free_ports(1)
    blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    blocker.bind(("", port))
    blocker.listen(1)
    try:
        comm = WireCommunicator(CommunicatorConfig(
            mode="wire", my_id=MASTER,
            topology=[(MASTER, "127.0.0.1", port),
                      (member(0), "127.0.0.1", free_ports(1)[0])],
        ))
        with pytest.raises(TransportError, match="cannot listen"):
            comm.start()
    finally:
        blocker.close()


def test_connect_failure_exhausts_retries(monkeypatch):
    monkeypatch.setattr(comms, "CONNECT_RETRIES", 1)
    monkeypatch.setattr(comms, "CONNECT_BACKOFF_MS", 10)
    parties = party_ids_for(1)
    ports = free_ports(2)
    topology = [(p, "127.0.0.1", port) for p, port in zip(parties, ports)]
    comm = WireCommunicator(
        CommunicatorConfig(mode="wire", my_id=MASTER, topology=topology)
    )
    with comm:
        with pytest.raises(TransportError, match="cannot reach member0"):
            comm.send(Message("batch", MASTER, member(0)))


def _connect(port):
    for _ in range(50):
        try:
            return socket.create_connection(("127.0.0.1", port), timeout=1.0)
        except OSError:
            time.sleep(0.02)
    raise AssertionError("listener did not come up")


def test_garbage_stream_fails_pending_recv():
    parties = party_ids_for(1)
    ports = free_ports(2)
    master_port = dict(zip(parties, ports))[MASTER]
    comm = wire_pair(parties, ports)[MASTER]
    with comm:
        raw = _connect(master_port)
        raw.sendall(b"not a frame at all, definitely longer than eight")
        with pytest.raises(FrameError, match="malformed frame"):
            comm.recv(member(0), "batch", timeout_ms=2000)
        raw.close()


def test_mid_frame_disconnect_fails_pending_recv():
    parties = party_ids_for(1)
    ports = free_ports(2)
    master_port = dict(zip(parties, ports))[MASTER]
    comm = wire_pair(parties, ports)[MASTER]
    frame = encode_frame(Message("batch", member(0), MASTER, blobs={"x": b"abcd"}))
    with comm:
        raw = _connect(master_port)
        raw.sendall(frame[: len(frame) // 2])
        raw.close()
        with pytest.raises(FrameError, match="mid-frame"):
            comm.recv(member(0), "batch", timeout_ms=2000)


def test_clean_disconnect_between_frames_is_silent():
    parties = party_ids_for(1)
    ports = free_ports(2)
    master_port = dict(zip(parties, ports))[MASTER]
    comm = wire_pair(parties, ports)[MASTER]
    frame = encode_frame(Message("batch", member(0), MASTER, blobs={"x": b"ab"}))
    with comm:
        raw = _connect(master_port)
        raw.sendall(frame)
        raw.close()
        assert comm.recv(member(0), "batch", timeout_ms=2000).blobs["x"] == b"ab"
        with pytest.raises(RecvTimeout):
            comm.recv(member(0), "batch", timeout_ms=80)


def test_config_validation():
    with pytest.raises(ValueError, match="unknown mode"):
        CommunicatorConfig(mode="carrier-pigeon", my_id=MASTER)
    with pytest.raises(ValueError, match="duplicate party"):
        CommunicatorConfig(mode="wire", my_id=MASTER, topology=[
            (MASTER, "h", 1), (MASTER, "h", 2),
        ])
    with pytest.raises(ValueError, match="missing from topology"):
        CommunicatorConfig(mode="wire", my_id=MASTER,
                           topology=[(member(0), "h", 1)])
    with pytest.raises(ValueError, match="used twice"):
        CommunicatorConfig(mode="wire", my_id=MASTER, topology=[
            (MASTER, "h", 1), (member(0), "h", 1),
        ])
    with pytest.raises(ValueError, match="wire-mode"):
        WireCommunicator(CommunicatorConfig(mode="local", my_id=MASTER))


def test_create_communicator_factory():
    hub = LocalHub(party_ids_for(1))
    local = comms.create_communicator(
        CommunicatorConfig(mode="local", my_id=MASTER), hub=hub
    )
    assert local.my_id == MASTER
    with pytest.raises(ValueError, match="needs a LocalHub"):
        comms.create_communicator(CommunicatorConfig(mode="local", my_id=MASTER))
