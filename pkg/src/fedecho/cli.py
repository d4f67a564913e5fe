"""Command-line front end: run experiments, verify properties, sweep grids.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure,
4 verification failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import build_config, read_raw
from .errors import ConfigError, NumericalError
from .runner import execute_run, resolve_output_dir, run_sweep
from .verify import VERIFIERS, run_verifier

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VERIFY = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedecho",
        description=(
            "Asynchronous federated learning with buffered aggregation and "
            "server-side uncertainty-aware distillation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured experiment")
    p_run.add_argument("config", help="path to the run configuration file")

    p_verify = sub.add_parser("verify", help="run a property suite on random instances")
    p_verify.add_argument("kind", choices=sorted(VERIFIERS), help="which suite to run")
    p_verify.add_argument("--trials", type=int, default=50)
    p_verify.add_argument("--seed", type=int, default=0)

    p_sweep = sub.add_parser("sweep", help="cross-product of config overrides")
    p_sweep.add_argument("config", help="path to the base configuration file")
    p_sweep.add_argument(
        "--grid",
        action="append",
        default=[],
        metavar="section.key=v1,v2",
        help="value grid for one config key (repeatable)",
    )
    p_sweep.add_argument(
        "--out",
        default=None,
        help="sweep directory (default: <output_dir>-sweep next to the base run)",
    )
    return parser


def _cmd_run(args) -> int:
    raw = read_raw(args.config)
    cfg = build_config(raw)
    summary = execute_run(cfg, raw_echo=raw)
    out = resolve_output_dir(cfg)
    print(f"wrote {out}")
    print(
        f"algorithm={summary['algorithm']} seeds={summary['seeds']} "
        f"accuracy={summary['accuracy_mean']:.4f}±{summary['accuracy_std']:.4f} "
        f"tau_max={summary['tau_max']}"
    )
    return EXIT_OK


def _cmd_verify(args) -> int:
    result = run_verifier(args.kind, args.trials, args.seed)
    status = "PASS" if result.passed else "FAIL"
    print(
        f"{result.kind}: {result.trials} trials, max error {result.max_error:.3e} "
        f"(threshold {result.threshold:.1e}) -> {status}"
    )
    if result.detail:
        print(f"  {result.detail}")
    return EXIT_OK if result.passed else EXIT_VERIFY


def _cmd_sweep(args) -> int:
    raw = read_raw(args.config)
    cfg = build_config(raw)
    sweep_dir = Path(args.out) if args.out else resolve_output_dir(cfg).with_name(
        resolve_output_dir(cfg).name + "-sweep"
    )
    out = run_sweep(raw, args.grid, sweep_dir)
    print(f"wrote {out}/aggregate.csv")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_sweep(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
