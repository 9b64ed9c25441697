"""Structured run logs: one JSON object per line, one pair of files per party.

Replaces external metric servers with something grep-able and diffable:
`<run_id>.<party>.events.jsonl` records every exchange (direction, peer,
method, payload bytes, duration) and `<run_id>.<party>.metrics.jsonl`
records ML metric points. Records are flushed line by line so a crashed
run still leaves a usable log.
"""

from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, NamedTuple

from .errors import DataError
from .frame import PartyId

METRIC_NAMES = ("loss", "accuracy", "auc", "matched_rows")

_EVENT_FIELDS = (
    "ts_unix_micros", "party", "direction", "peer", "method",
    "payload_bytes", "duration_micros",
)
_METRIC_FIELDS = ("ts_unix_micros", "party", "epoch", "name", "value")


@dataclass(frozen=True)
class EventRecord:
    """One logged exchange."""

    ts_unix_micros: int
    party: PartyId
    direction: str  # "send" | "recv"
    peer: PartyId
    method: str
    payload_bytes: int
    duration_micros: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "ts_unix_micros": self.ts_unix_micros,
                "party": str(self.party),
                "direction": self.direction,
                "peer": str(self.peer),
                "method": self.method,
                "payload_bytes": self.payload_bytes,
                "duration_micros": self.duration_micros,
            },
            separators=(",", ":"),
        )


@dataclass(frozen=True)
class MetricRecord:
    """One ML metric point."""

    ts_unix_micros: int
    party: PartyId
    epoch: int
    name: str
    value: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "ts_unix_micros": self.ts_unix_micros,
                "party": str(self.party),
                "epoch": self.epoch,
                "name": self.name,
                "value": self.value,
            },
            separators=(",", ":"),
        )


class TranscriptEntry(NamedTuple):
    step: int
    sender: str
    receiver: str
    method: str
    payload_bytes: int


def now_micros() -> int:
    return time.time_ns() // 1000


class MetricsSink:
    """Per-party JSONL writer. Thread-safe; lines are written atomically."""

    def __init__(self, log_dir: str | Path, run_id: str, party: PartyId) -> None:
        self.party = party
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        self.events_path = log_dir / f"{run_id}.{party}.events.jsonl"
        self.metrics_path = log_dir / f"{run_id}.{party}.metrics.jsonl"
        self._events = open(self.events_path, "w", encoding="utf-8")
        self._metrics = open(self.metrics_path, "w", encoding="utf-8")
        self._lock = threading.Lock()

    def log_event(self, r: EventRecord) -> None:
        line = r.to_json() + "\n"
        with self._lock:
            self._events.write(line)
            self._events.flush()

    def log_metric(self, r: MetricRecord) -> None:
        line = r.to_json() + "\n"
        with self._lock:
            self._metrics.write(line)
            self._metrics.flush()

    def close(self) -> None:
        with self._lock:
            self._events.close()
            self._metrics.close()

    def __enter__(self) -> MetricsSink:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def _parse_lines(path: Path, fields: tuple[str, ...]) -> list[dict[str, Any]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from None
            if not isinstance(obj, dict) or set(obj) != set(fields):
                raise DataError(f"{path}:{lineno}: unexpected record fields")
            records.append(obj)
    return records


def read_events(path: str | Path) -> list[dict[str, Any]]:
    return _parse_lines(Path(path), _EVENT_FIELDS)


def read_metrics(path: str | Path) -> list[dict[str, Any]]:
    return _parse_lines(Path(path), _METRIC_FIELDS)


def transcript_from_events(path: str | Path) -> list[TranscriptEntry]:
    """Rebuild a party's send transcript from its event log."""
    entries = []
    for rec in read_events(path):
        if rec["direction"] != "send":
            continue
        entries.append(
            TranscriptEntry(
                step=len(entries),
                sender=rec["party"],
                receiver=rec["peer"],
                method=rec["method"],
                payload_bytes=rec["payload_bytes"],
            )
        )
    return entries


def summarize(log_dir: str | Path, run_id: str) -> dict[str, Any]:
    """Aggregate one run's logs: bytes per party pair, mean duration per
    method, metric series. Deterministic given the log contents."""
    log_dir = Path(log_dir)
    event_files = sorted(log_dir.glob(f"{run_id}.*.events.jsonl"))
    metric_files = sorted(log_dir.glob(f"{run_id}.*.metrics.jsonl"))
    if not event_files and not metric_files:
        raise DataError(f"no logs for run {run_id!r} in {log_dir}")

    parties = sorted(
        {p.name.split(".")[1] for p in event_files + metric_files},
        key=lambda s: PartyId.parse(s).sort_key(),
    )

    total_bytes: dict[str, int] = {}
    durations: dict[str, list[int]] = {}
    for path in event_files:
        for rec in read_events(path):
            if rec["direction"] == "send":
                pair = f"{rec['party']}->{rec['peer']}"
                total_bytes[pair] = total_bytes.get(pair, 0) + rec["payload_bytes"]
            durations.setdefault(rec["method"], []).append(rec["duration_micros"])

    series: dict[str, list[dict[str, Any]]] = {}
    for path in metric_files:
        for rec in read_metrics(path):
            if not isinstance(rec["value"], (int, float)) or not math.isfinite(rec["value"]):
                raise DataError(f"{path}: non-finite metric value {rec['value']!r}")
            series.setdefault(rec["name"], []).append(
                {"party": rec["party"], "epoch": rec["epoch"], "value": rec["value"]}
            )
    for points in series.values():
        points.sort(key=lambda p: (PartyId.parse(p["party"]).sort_key(), p["epoch"]))

    return {
        "run_id": run_id,
        "parties": parties,
        "total_bytes_sent": {k: total_bytes[k] for k in sorted(total_bytes)},
        "mean_duration_micros": {
            m: sum(v) / len(v) for m, v in sorted(durations.items())
        },
        "metrics": {k: series[k] for k in sorted(series)},
    }


def render_report(report: dict[str, Any]) -> str:
    """Plain-text table view of a summarize() report."""
    lines = [f"run {report['run_id']}  parties: {', '.join(report['parties'])}", ""]
    lines.append("bytes sent per pair:")
    if report["total_bytes_sent"]:
        width = max(len(k) for k in report["total_bytes_sent"])
        for pair, n in report["total_bytes_sent"].items():
            lines.append(f"  {pair.ljust(width)}  {n}")
    else:
        lines.append("  (none)")
    lines.append("")
    lines.append("mean exchange duration (us) per method:")
    if report["mean_duration_micros"]:
        width = max(len(k) for k in report["mean_duration_micros"])
        for meth, d in report["mean_duration_micros"].items():
            lines.append(f"  {meth.ljust(width)}  {d:.1f}")
    else:
        lines.append("  (none)")
    lines.append("")
    lines.append("metrics:")
    any_metric = False
    for name, points in report["metrics"].items():
        for p in points:
            any_metric = True
            lines.append(
                f"  {name}  epoch={p['epoch']}  {p['value']:.6g}  ({p['party']})"
            )
    if not any_metric:
        lines.append("  (none)")
    return "\n".join(lines) + "\n"
