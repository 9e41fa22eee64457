"""Command-line pipeline: prepare | train | optimize | execute | evaluate | report.

Global options come before the subcommand in the usual argparse way:

    fewshot-testing --config cfg.json --set optimize.n=5 --out artifacts optimize

Exit codes: 0 success, 1 invalid configuration or arguments, 2 missing or
unreadable artifact, 3 numerical failure.

``--threads N`` caps the BLAS/OpenMP thread pools. It must take effect
before numpy loads, so this module keeps its import-time dependencies to
the standard library and pulls in the numeric stages only inside
:func:`main` after the environment is set.
"""

from __future__ import annotations

import argparse
import os
import sys

__all__ = ["main", "build_parser"]

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)

_STAGES = ("prepare", "train", "optimize", "execute", "evaluate", "report")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad arguments; this pipeline reserves 2 for
    missing artifacts, so argument problems exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _apply_thread_cap(argv: list[str]) -> None:
    """Set thread-pool env vars from --threads before numpy is imported."""
    value = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            value = argv[i + 1]
        elif arg.startswith("--threads="):
            value = arg.split("=", 1)[1]
    if value is None:
        return
    try:
        threads = int(value)
    except ValueError:
        return  # argparse reports this later with a proper message
    if threads < 1:
        return
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(threads)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fewshot-testing",
        description="Few-shot scenario testing pipeline for crash-rate estimation.",
    )
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="JSON config file merged over the defaults")
    parser.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        dest="overrides",
                        help="override one config value (dotted path, repeatable)")
    parser.add_argument("--out", metavar="DIR", default="artifacts",
                        help="artifact directory (default: artifacts)")
    parser.add_argument("--threads", metavar="N", type=int, default=None,
                        help="cap BLAS/OpenMP thread pools at N")
    sub = parser.add_subparsers(dest="stage", metavar="|".join(_STAGES))
    for stage in _STAGES:
        sub.add_parser(stage, description=f"run the {stage} stage")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_thread_cap(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 1
    if args.stage is None:
        parser.print_usage(sys.stderr)
        print("error: a stage subcommand is required", file=sys.stderr)
        return 1

    # Heavy imports happen after the thread cap is in the environment.
    from . import pipeline
    from .config import apply_overrides, load_config, validate_config
    from .errors import FewShotError

    runners = {
        "prepare": pipeline.run_prepare,
        "train": pipeline.run_train,
        "optimize": pipeline.run_optimize,
        "execute": pipeline.run_execute,
        "evaluate": pipeline.run_evaluate,
        "report": pipeline.run_report,
    }
    try:
        cfg = apply_overrides(load_config(args.config), args.overrides)
        validate_config(cfg)  # report every violated section before any work
        os.makedirs(args.out, exist_ok=True)
        summary = runners[args.stage](cfg, args.out)
    except FewShotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
