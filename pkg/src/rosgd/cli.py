"""Command-line entry point: ``rosgd {generate,run,stability,report,all}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiment
from .families import CertificationError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rosgd", description="Random-order SGD experiment driver")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("generate", "write certified family files"),
        ("run", "run the regret matrix"),
        ("stability", "estimate on-average stability over an m grid"),
        ("report", "fit regret against log T and write summary.json"),
        ("all", "generate, run, stability and report"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        if name == "report":
            continue
        sp.add_argument("--config", type=Path, help="key = value config file")
        sp.add_argument("--seed", type=int, help="override master_seed")
        sp.add_argument("--workers", type=int, help="worker processes for independent cells")
        if name in ("stability", "all"):
            sp.add_argument("--exhaustive", action="store_true", help="exact enumeration (T <= 8)")
    return p


def _config(args) -> experiment.ExperimentConfig:
    cfg = experiment.load_config(args.config) if args.config else experiment.ExperimentConfig()
    return experiment.with_overrides(cfg, master_seed=args.seed, workers=args.workers)


def _failed(checks) -> int:
    bad = [c["name"] for c in checks if c.get("passed") is False]
    for name in bad:
        print(f"FAIL {name}", file=sys.stderr)
    return 1 if bad else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            summary = experiment.cmd_report(args.out)
            return _failed(summary["checks"])
        cfg = _config(args)
        if args.command == "generate":
            for path in experiment.cmd_generate(cfg, args.out):
                print(path)
            return 0
        if args.command == "run":
            cells = experiment.cmd_run(cfg, args.out)
            return _failed([{"name": f"{c['algorithm']}_T{c['T']}", "passed": c["bound_ok"]} for c in cells])
        if args.command == "stability":
            return _failed(experiment.cmd_stability(cfg, args.out, exhaustive=args.exhaustive))
        summary = experiment.cmd_all(cfg, args.out, exhaustive=args.exhaustive)
        return _failed(summary["checks"])
    except (FileNotFoundError, ValueError, CertificationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
