"""Command line entry points.

    vflkit local  --config run.ini
    vflkit agent  --config run.ini --party member0
    vflkit gen    --out data/ [--parties 3 --rows 200 --features 3 --seed 0]
    vflkit report --log-dir logs/ --run-id demo

Exit codes: 0 success, 1 configuration or data error, 2 transport error,
3 protocol error (matching failures included).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import parse_config
from .data import gen_synthetic
from .errors import ConfigError, TransportError, VflkitError
from .frame import PartyId
from .metrics import render_report, summarize
from .runner import run_agent, run_local


class _Parser(argparse.ArgumentParser):
    """Usage mistakes map to the config-error exit code, not argparse's 2."""

    def error(self, message: str) -> None:
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vflkit", description="vertical federated learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_local = sub.add_parser("local", help="run all parties as threads in one process")
    p_local.add_argument("--config", required=True, help="path to the run config")

    p_agent = sub.add_parser("agent", help="run a single party over TCP")
    p_agent.add_argument("--config", required=True, help="path to the run config")
    p_agent.add_argument("--party", required=True,
                         help="master, member<i>, or arbiter")

    p_gen = sub.add_parser("gen", help="generate a synthetic vertical dataset")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.add_argument("--parties", type=int, default=3,
                       help="data-holding parties, master included (default 3)")
    p_gen.add_argument("--rows", type=int, default=200, help="default 200")
    p_gen.add_argument("--features", type=int, default=3,
                       help="features per party (default 3)")
    p_gen.add_argument("--seed", type=int, default=0, help="default 0")

    p_report = sub.add_parser("report", help="summarize one run's logs")
    p_report.add_argument("--log-dir", required=True)
    p_report.add_argument("--run-id", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        if args.command == "local":
            return run_local(parse_config(args.config))
        if args.command == "agent":
            try:
                party = PartyId.parse(args.party)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            return run_agent(parse_config(args.config), party)
        if args.command == "gen":
            written = gen_synthetic(
                args.out, args.parties, args.rows, args.features, args.seed
            )
            for name, path in written.items():
                print(f"{name}: {path}")
            return 0
        if args.command == "report":
            report = summarize(args.log_dir, args.run_id)
            out_path = Path(args.log_dir) / f"{args.run_id}.summary.json"
            out_path.write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
            sys.stdout.write(render_report(report))
            return 0
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VflkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
