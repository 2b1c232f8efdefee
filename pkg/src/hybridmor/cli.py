"""Command-line entry points.

``solve`` runs a single configuration, ``study`` runs the sweep mode
declared in the config file, and ``worker`` processes one task bundle
(the form invoked on remote machines and by run_workers locally).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import orchestrator
from .config import ConfigError, read_config


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run config file")
    parser.add_argument("--workers", type=int, default=None,
                        help="override worker process count")
    parser.add_argument("--oracle", choices=("on", "off"), default=None,
                        help="override the conforming-oracle switch")
    parser.add_argument("--out", default=None, help="override output dir")


def _load_config(args, force_single: bool):
    cfg = read_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    if args.oracle is not None:
        cfg.oracle = args.oracle == "on"
    if args.out is not None:
        cfg.out = args.out
    if force_single:
        cfg.mode = "single"
    return cfg.validate()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hybridmor",
        description="Domain-decomposed Poisson solver with per-subdomain "
                    "model order reduction")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run one configuration")
    _add_common(p_solve)
    p_study = sub.add_parser("study", help="run the configured sweep")
    _add_common(p_study)
    p_worker = sub.add_parser("worker", help="process one task bundle")
    p_worker.add_argument("--task", required=True, help="task bundle path")
    p_worker.add_argument("--out", default=None,
                          help="result path (default: next to the task)")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "worker":
            path = orchestrator.worker_main(args.task, args.out)
            print(path)
            return 0
        cfg = _load_config(args, force_single=args.command == "solve")
        report = orchestrator.run_study(cfg)
        print(report)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
