"""Command line entry point: ``steinmatch run`` and ``steinmatch check``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .exceptions import ConfigError, SteinMatchError
from .harness import config_help, emit_csv, emit_summary, parse_config, run_experiment

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_STRICT = 3


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="steinmatch",
        description="SVGD moment-matching experiments against exact Monte Carlo.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser(
        "run",
        help="run an experiment config",
        description="Run one experiment config and write results.csv and summary.csv.",
        epilog=config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    run.add_argument("config", help="path to the JSON experiment config")
    run.add_argument("--out", help="output directory (default: the config's 'output' field)")
    run.add_argument("--paper-scale", action="store_true", help="use the full-size models (d=100, 15 GMM components, 10 hidden units)")
    run.add_argument("--threads", type=int, help="worker threads (fallback: $STEINMATCH_THREADS, then 1)")
    run.add_argument("--seed", type=int, help="override the config's master seed")
    run.add_argument("--strict", action="store_true", help="exit 3 if any run diverged or failed the rank condition")
    run.add_argument("--timing", action="store_true", help="fill the wall_time column (breaks byte-level reproducibility)")

    sub.add_parser("check", help="run the built-in invariant checks")
    return parser


def _cmd_run(args):
    try:
        cfg = parse_config(args.config, paper_scale=args.paper_scale, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or cfg.output
    os.makedirs(out_dir, exist_ok=True)
    try:
        rows = run_experiment(cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    results = os.path.join(out_dir, "results.csv")
    summary = os.path.join(out_dir, "summary.csv")
    emit_csv(rows, results, timing=args.timing)
    emit_summary(rows, summary)
    print(f"wrote {len(rows)} rows to {results} and {summary}")
    failed = [r for r in rows if r.stop == "diverged" or r.rank_ok is False]
    if failed:
        print(f"{len(failed)} run(s) diverged or failed the rank condition", file=sys.stderr)
        if args.strict:
            return EXIT_STRICT
    return EXIT_OK


def _cmd_check():
    from .checks import run_checks

    results = run_checks()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_FAIL


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_check()
    except SteinMatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
