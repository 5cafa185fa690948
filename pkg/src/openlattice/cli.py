"""Command line entry point.

Exit codes: 0 when every check passes, 1 on a quantitative failure, 2 on
a configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .report import emit_report

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
COMMANDS = ("validate", "simulate", "solve", "hydrostatic", "phases", "couple-audit", "hydro-convergence")

log = logging.getLogger("openlattice")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="openlattice", description="Open lattice gas experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path, help="experiment TOML file")
        s.add_argument("--seed", type=_u64, default=None, help="master seed (overrides the file)")
        s.add_argument("--workers", type=int, default=None, help="worker processes")
        s.add_argument("--out", type=Path, default=None, help="output directory")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.workers, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"ok {cfg.kind} {cfg.digest()}")
        return EXIT_OK

    from .experiments import run_experiment

    try:
        result = run_experiment(cfg, args.command)
    except (ValueError, NotImplementedError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = cfg.output or Path("results")
    for path in emit_report(result, out, cfg.digest()):
        log.info("wrote %s", path)
    for name, ok in sorted(result.checks.items()):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if result.passed else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
