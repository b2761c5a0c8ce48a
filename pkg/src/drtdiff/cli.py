"""Command line entry point: ``drtdiff run | report | diagnose``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ExperimentConfig
from .errors import ConfigError, DrtDiffError
from .experiment import compare_report, diagnose_run, format_report, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drtdiff", description="Decentralized classical vs DRT diffusion simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", help="JSON config file (defaults are used for missing fields)")
    run.add_argument("--strategy", choices=["classical", "drt", "both"])
    run.add_argument("--threads", type=int)
    run.add_argument("--dump-tensors", action="store_true")
    run.add_argument("--freeze-weights-within-round", action="store_true")
    run.add_argument("--checkpoint-every", type=int)
    run.add_argument("--out", help="output directory (default: $DRTDIFF_OUT or ./runs)")

    report = sub.add_parser("report", help="steady-state comparison table from metrics CSVs")
    report.add_argument("--inputs", nargs="+", required=True)
    report.add_argument("--json", action="store_true", help="emit JSON instead of a text table")

    diagnose = sub.add_parser("diagnose", help="centroid / backward-product diagnostics of a finished run")
    diagnose.add_argument("--run", required=True, help="run directory with tensor dumps and checkpoints")
    diagnose.add_argument("--horizon", type=int, default=50)
    diagnose.add_argument("--plain-mean-centroid", action="store_true")
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.strategy:
        cfg.run.strategy = args.strategy
    if args.threads is not None:
        cfg.run.threads = args.threads
    if args.dump_tensors:
        cfg.output.dump_tensors = True
    if args.freeze_weights_within_round:
        cfg.run.freeze_weights_within_round = True
    if args.checkpoint_every is not None:
        cfg.output.checkpoint_every = args.checkpoint_every
    if args.out:
        cfg.output.out_dir = args.out
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = _load_config(args)
            summary = run_experiment(cfg)
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "report":
            table = compare_report(args.inputs)
            print(json.dumps(table, indent=2, sort_keys=True) if args.json else format_report(table))
        elif args.command == "diagnose":
            results = diagnose_run(args.run, args.horizon, args.plain_mean_centroid)
            for name, rows in results.items():
                print(f"{name}: {len(rows)} diagnostic rows")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DrtDiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
