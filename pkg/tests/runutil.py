"""Shared machinery for multi-party tests: thread drivers, synthetic
vertical datasets, config/CSV writers, and free-port allocation."""

import csv
import socket
import threading
import time

from vflkit.comms import LocalHub
from vflkit.data import PartyDataset
from vflkit.frame import MASTER, PartyId, member
from vflkit.protocols import run_party
from vflkit.tensor import Tensor

import oracles


def drive(parties, body, record_frames=False, sinks=None, expect_errors=False):
    """Run body(comm, party) on one thread per party over a LocalHub.

    Returns (results, hub) and re-raises the earliest party failure,
    unless expect_errors is set, in which case it returns
    (results, errors, hub) with one entry per party in exactly one of
    the two dicts.
    """
    hub = LocalHub(list(parties), record_frames=record_frames)
    sinks = sinks or {}
    results = {}
    failures = []
    lock = threading.Lock()

    def work(pid):
        comm = hub.communicator(pid, sinks.get(pid))
        try:
            with comm:
                out = body(comm, pid)
            with lock:
                results[pid] = out
        except Exception as exc:
            with lock:
                failures.append((time.monotonic(), pid, exc))
            hub.abort(f"{pid} failed: {exc}")

    threads = [
        threading.Thread(target=work, args=(p,), name=f"test-{p}")
        for p in parties
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    if expect_errors:
        return results, {pid: exc for _, pid, exc in failures}, hub
    if failures:
        failures.sort(key=lambda f: f[0])
        raise failures[0][2]
    return results, hub


def run_protocol(datasets, config, sinks=None, record_frames=False):
    """Full matching + training for every configured party, in threads."""

    def body(comm, pid):
        sink = (sinks or {}).get(pid)
        return run_party(comm, datasets.get(pid), config, sink)

    return drive(list(datasets), body, record_frames=record_frames, sinks=sinks)


# ---------------------------------------------------------------------------
# synthetic vertical data

def make_vertical(rows, split, seed, id_prefix="r"):
    """A dense vertical partition with a linear teacher.

    split lists per-party feature counts, members first, master last.
    Returns (ids, mats, labels) where mats[k] is party k's row-major
    list-of-lists block. All parties hold every id, and ids sort in
    insertion order, so the shared order equals the natural row order.
    """
    rng = oracles.substream(seed, "testdata", rows, *split)
    total = sum(split)
    mats_full = [[rng.gauss(0.0, 1.0) for _ in range(total)] for _ in range(rows)]
    w = [rng.gauss(0.0, 1.0) for _ in range(total)]
    labels = []
    for row in mats_full:
        z = sum(row[j] * w[j] for j in range(total))
        labels.append(1.0 if z >= 0.0 else 0.0)

    ids = tuple(f"{id_prefix}{i:05d}" for i in range(rows))
    mats = []
    lo = 0
    for width in split:
        mats.append([row[lo:lo + width] for row in mats_full])
        lo += width
    return ids, mats, labels


def party_ids_for(n_members, arbiter=False):
    ids = [member(k) for k in range(n_members)] + [MASTER]
    if arbiter:
        ids.append(PartyId("arbiter"))
    return ids


def datasets_from_blocks(ids, mats, labels, arbiter=False):
    """PartyDataset per party: mats members-first, master block last."""
    n_members = len(mats) - 1
    out = {}
    for k in range(n_members):
        out[member(k)] = PartyDataset(
            ids=ids,
            features=Tensor.from_rows(mats[k]),
            labels=None,
            feature_names=tuple(f"x{j}" for j in range(len(mats[k][0]))),
        )
    out[MASTER] = PartyDataset(
        ids=ids,
        features=Tensor.from_rows(mats[-1]),
        labels=Tensor(len(ids), 1, tuple(labels)),
        feature_names=tuple(f"x{j}" for j in range(len(mats[-1][0]))),
    )
    if arbiter:
        out[PartyId("arbiter")] = None
    return out


# ---------------------------------------------------------------------------
# on-disk artifacts for CLI/subprocess tests

def write_party_csvs(out_dir, ids, mats, labels):
    """One CSV per party (member0..memberN, master with the label column)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    n_members = len(mats) - 1
    paths = {}
    for k in range(n_members + 1):
        name = "master" if k == n_members else f"member{k}"
        width = len(mats[k][0])
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            header = ["id"] + [f"x{j}" for j in range(width)]
            if name == "master":
                header.append("label")
            writer.writerow(header)
            for i, rid in enumerate(ids):
                row = [rid] + [repr(v) for v in mats[k][i]]
                if name == "master":
                    row.append(repr(labels[i]))
                writer.writerow(row)
        paths[name] = path
    return paths


def write_ini(path, common, parties, he=None):
    """Minimal INI writer for run configs."""
    lines = ["[common]"]
    for key, value in common.items():
        lines.append(f"{key} = {value}")
    if he is not None:
        lines.append("[he]")
        for key, value in he.items():
            lines.append(f"{key} = {value}")
    for name, body in parties.items():
        lines.append(f"[{name}]")
        for key, value in body.items():
            lines.append(f"{key} = {value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def free_ports(count):
    """Distinct currently-free TCP ports (best effort, close-then-reuse)."""
    socks = []
    for _ in range(count):
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind(("127.0.0.1", 0))
        socks.append(s)
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports
