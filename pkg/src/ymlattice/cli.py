"""Command-line entry point.

    ymlattice validate [--inject-fault NAME] [--seed S] [--report PATH]
    ymlattice run CONFIG [--set key=value ...] [--seed S] [--output DIR] [--threads T] [--max-sweeps M]
    ymlattice resume CHECKPOINT [--config PATH] [--set key=value ...] [--max-sweeps M]

Exit codes: 0 success, 1 failed check or run error, 2 configuration error.
The environment variable YMLATTICE_OUTPUT_ROOT, when set, is the root that
relative output directories are resolved against.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from .algebra import FAULTS, inject_fault
from .config import ConfigError, RunConfig, load_config

OUTPUT_ROOT_ENV = "YMLATTICE_OUTPUT_ROOT"
KNOWN_FAULTS = ("skip-reunitarization",)


def resolve_output(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ymlattice", description="U(N) lattice gauge theory toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="run the invariant suite")
    v.add_argument("--inject-fault", choices=KNOWN_FAULTS, default=None)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--report", default=None, help="also write the JSON report to this file")

    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("config")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--output", default=None)
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--max-sweeps", type=int, default=None,
                   help="stop after this many production sweeps and write a checkpoint (sample only)")

    s = sub.add_parser("resume", help="continue a checkpointed run")
    s.add_argument("checkpoint")
    s.add_argument("--config", default=None, help="refuse to resume unless the checkpoint matches this config")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides")
    s.add_argument("--max-sweeps", type=int, default=None)
    return ap


def cmd_validate(args) -> int:
    from .validation import report, run_validation
    settings = {"seed": args.seed, "fault": args.inject_fault}
    h = hashlib.sha256(json.dumps(settings, sort_keys=True).encode()).hexdigest()
    if args.inject_fault:
        with inject_fault(args.inject_fault):
            results = run_validation(args.seed)
    else:
        results = run_validation(args.seed)
    rep = report(results, args.seed, h)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.check_id}: measured {r.measured:.3e} tolerance {r.tolerance:.1e}")
    print(json.dumps(rep, indent=2))
    if args.report:
        Path(args.report).write_text(json.dumps(rep, indent=2) + "\n")
    return 0 if rep["passed"] else 1


def cmd_run(args) -> int:
    from .runner import run_experiment
    cfg = load_config(args.config)
    over = list(args.overrides)
    if args.seed is not None:
        over.append(f"seed={args.seed}")
    if args.output is not None:
        over.append(f"output={json.dumps(args.output)}")
    if args.threads is not None:
        over.append(f"threads={args.threads}")
    cfg = cfg.with_overrides(over)
    if args.max_sweeps is not None and args.max_sweeps < 1:
        raise ConfigError("--max-sweeps: must be >= 1")
    outcome = run_experiment(cfg, resolve_output(cfg.output), args.max_sweeps)
    print(json.dumps({"status": outcome.status, "output": str(outcome.outdir), "config_hash": cfg.config_hash()}))
    return 0


def cmd_resume(args) -> int:
    from .io import CheckpointError, ConfigMismatchError, load_checkpoint
    from .runner import resume
    expected = None
    try:
        if args.config is not None:
            expected = load_config(args.config)
        if args.overrides:
            base = expected or load_checkpoint(args.checkpoint).config
            expected = base.with_overrides(args.overrides)
        outcome = resume(args.checkpoint, expected=expected, max_sweeps=args.max_sweeps)
    except ConfigMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"status": outcome.status, "output": str(outcome.outdir)}))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    FAULTS.clear()
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "run":
            return cmd_run(args)
        return cmd_resume(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
