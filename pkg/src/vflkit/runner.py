"""Experiment runners: all parties in one process, or a single wire agent.

run_local spawns one thread per configured party and wires them through a
LocalHub; run_agent boots exactly one party with the TCP backend. Both
paths run record matching, then the configured protocol, write JSONL
logs, and leave each party's final parameters in
`<log_dir>/<run_id>.<party>.weights.json` (floats serialized as hex so
cross-process comparisons are bitwise).

Exit codes: 0 success, 1 config/data error, 2 transport error,
3 protocol or matching error. On a local run the first failing party
determines the code and the printed message; the remaining parties are
woken with an abort so nothing hangs on a dead peer.
"""

from __future__ import annotations

import json
import sys
import threading
import time
from pathlib import Path

from .comms import CommunicatorConfig, LocalHub, WireCommunicator
from .config import PartyConfig, RunConfig
from .data import check_binary_labels, load_party_csv
from .errors import ConfigError, TopologyError, TransportError, VflkitError
from .frame import PartyId
from .metrics import MetricsSink
from .protocols import ProtocolResult, run_party
from .tensor import Tensor


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, OSError)):
        return 1
    if isinstance(exc, TransportError):
        return 2
    return 3


def weights_path(cfg: RunConfig, party: PartyId) -> Path:
    return Path(cfg.log_dir) / f"{cfg.run_id}.{party}.weights.json"


def write_weights(path: Path, party: PartyId, blocks: dict[str, Tensor]) -> None:
    doc = {
        "party": str(party),
        "blocks": {
            name: {
                "rows": t.rows,
                "cols": t.cols,
                "data": [v.hex() for v in t.data],
            }
            for name, t in sorted(blocks.items())
        },
    }
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def read_weights(path: str | Path) -> dict[str, Tensor]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return {
        name: Tensor(
            b["rows"], b["cols"], tuple(float.fromhex(h) for h in b["data"])
        )
        for name, b in doc["blocks"].items()
    }


def _check_topology(cfg: RunConfig) -> None:
    if cfg.has_arbiter() and cfg.train.protocol != "he_logreg":
        raise TopologyError(
            f"an arbiter is configured but protocol {cfg.train.protocol!r} "
            "does not use one"
        )


def _party_main(comm, cfg: RunConfig, pcfg: PartyConfig,
                sink: MetricsSink) -> ProtocolResult:
    dataset = None
    if pcfg.party.role != "arbiter":
        dataset = load_party_csv(pcfg.data_path, pcfg.id_column, pcfg.label_column)
        check_binary_labels(dataset, cfg.train.protocol)
    result = run_party(comm, dataset, cfg.train, sink)
    write_weights(weights_path(cfg, pcfg.party), pcfg.party, result.blocks)
    return result


def run_local(cfg: RunConfig) -> int:
    """Every party as a thread in this process; 0 on success."""
    sinks: dict[PartyId, MetricsSink] = {}
    try:
        _check_topology(cfg)
        hub = LocalHub(cfg.party_ids())
        for pid in cfg.party_ids():
            sinks[pid] = MetricsSink(cfg.log_dir, cfg.run_id, pid)
    except (VflkitError, OSError) as exc:
        for sink in sinks.values():
            sink.close()
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)

    failures: list[tuple[float, PartyId, BaseException]] = []
    fail_lock = threading.Lock()

    def work(pcfg: PartyConfig) -> None:
        comm = hub.communicator(pcfg.party, sinks[pcfg.party])
        try:
            with comm:
                _party_main(comm, cfg, pcfg, sinks[pcfg.party])
        except Exception as exc:
            with fail_lock:
                failures.append((time.monotonic(), pcfg.party, exc))
            hub.abort(f"{pcfg.party} failed: {exc}")

    threads = [
        threading.Thread(target=work, args=(p,), name=f"party-{p.party}")
        for p in cfg.parties
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for sink in sinks.values():
        sink.close()

    if failures:
        failures.sort(key=lambda f: f[0])
        _, party, exc = failures[0]
        print(f"error: {party}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    return 0


def run_agent(cfg: RunConfig, party: PartyId) -> int:
    """One party over TCP per the configured topology; blocks until done."""
    try:
        _check_topology(cfg)
        pcfg = cfg.party(party)
        topology = []
        for p in cfg.parties:
            if p.port <= 0:
                raise ConfigError(
                    f"[{p.party}] port: a positive port is required in agent mode"
                )
            topology.append((p.party, p.host, p.port))
        comm_cfg = CommunicatorConfig(mode="wire", my_id=party, topology=topology)
    except (VflkitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1 if isinstance(exc, (ConfigError, ValueError)) else exit_code_for(exc)

    sink = None
    comm = None
    try:
        sink = MetricsSink(cfg.log_dir, cfg.run_id, party)
        comm = WireCommunicator(comm_cfg, sink)
        comm.start()
        _party_main(comm, cfg, pcfg, sink)
        return 0
    except Exception as exc:
        print(f"error: {party}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    finally:
        if comm is not None:
            comm.close()
        if sink is not None:
            sink.close()
