from __future__ import annotations

import argparse
from collections.abc import Sequence
from pathlib import Path


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="hn-bridge: simulated honeynet with an inline honeywall")
    parser.add_argument("--config", type=Path, help="Path to config.toml (or .json)", default=None)
    parser.add_argument("--log-level", default="WARNING", help="Python log level (INFO, DEBUG, ...)")

    # per-command --config; SUPPRESS keeps the global value when omitted
    config_flag = argparse.ArgumentParser(add_help=False)
    config_flag.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="Path to config.toml (or .json)")

    subparsers = parser.add_subparsers(dest="command", required=True)
    check = subparsers.add_parser("check-rules", help="Parse a rule file and print its canonical form")
    check.add_argument("file", type=Path)

    run = subparsers.add_parser("run", parents=[config_flag], help="Run a scenario through the honeywall")
    run.add_argument("scenario", type=Path)
    run.add_argument("--rules", type=Path, required=True, help="Rule file")
    run.add_argument("--out", type=Path, required=True, help="Output directory for the stores")

    replay = subparsers.add_parser("replay", parents=[config_flag], help="Feed a packet trace through the gateway")
    replay.add_argument("trace", type=Path)
    replay.add_argument("--rules", type=Path, required=True, help="Rule file")
    replay.add_argument("--out", type=Path, required=True, help="Output directory for the stores")

    report = subparsers.add_parser("report", parents=[config_flag], help="Print metrics for a run directory")
    report.add_argument("dir", type=Path)

    tokens = subparsers.add_parser("tokens", parents=[config_flag], help="List honeytoken sightings in a run")
    tokens.add_argument("dir", type=Path)

    return parser.parse_args(argv)
