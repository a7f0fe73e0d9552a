"""Command-line entry point.

Exit codes: 0 when every flagged row passes, 1 on a tolerance failure, 2 on
an invalid configuration, 3 when a solver fails.
"""

from __future__ import annotations

import argparse
import os
import sys

from ..stokes import SolverError
from .config import SUBCOMMANDS, ConfigError, ExperimentConfig, load, parse_int_list
from .experiments import run_experiment
from .report import all_passed, write_csv

THREADS_ENV = "STOKES_PRESSURE_THREADS"

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def _apply_threads() -> None:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return
    try:
        count = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if count < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer")
    import numba

    numba.set_num_threads(min(count, numba.config.NUMBA_NUM_THREADS))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stokes-pressure",
        description="Verification suites and estimate sweeps for the transient Stokes pressure.")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--out", help="CSV output path (overrides [experiment] out)")
        p.add_argument("--seed", help="unsigned 64-bit seed (overrides [experiment] seed)")
        p.add_argument("--resolution-override", metavar="LIST",
                       help="comma-separated, strictly increasing resolutions")
        p.add_argument("--corrupt", action="store_true",
                       help="feed deliberately corrupted inputs to the checks (negative control)")
    return parser


def configure(args) -> ExperimentConfig:
    cfg = load(args.config, args.subcommand) if args.config else ExperimentConfig(args.subcommand)
    res = None
    if args.resolution_override is not None:
        res = parse_int_list(args.resolution_override, "--resolution-override")
    return cfg.with_overrides(seed=args.seed, out=args.out, resolutions=res,
                              corrupt=args.corrupt or None)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        _apply_threads()
        cfg = configure(args)
        rows = run_experiment(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_csv(rows, cfg.out)
    failed = [r for r in rows if r.passed is False]
    print(f"{cfg.subcommand}: {len(rows)} rows, {len(failed)} failed -> {cfg.out}")
    for r in failed:
        print(f"  FAIL {r.quantity} value={r.value:.6g} tolerance={r.tolerance:.6g} "
              f"{r.param_json()}")
    return EXIT_OK if all_passed(rows) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
