"""Command line: ``rmsleep train|evaluate|analyze``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .core import ConfigError, read_kv_file
from .experiments import (
    RunConfig,
    analyze,
    evaluate,
    resolve_output_dir,
    run_config_from_kv,
    train,
    write_json,
)
from .rewards import REGIMES
from .td3 import TrainingError


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = run_config_from_kv(read_kv_file(args.config)) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "regime", None):
        overrides["regime"] = args.regime
    if getattr(args, "episodes", None):
        overrides["episodes"] = args.episodes
    if getattr(args, "seed", None):
        overrides["seeds"] = tuple(args.seed)
    if getattr(args, "out", None):
        overrides["output_dir"] = Path(args.out)
    if getattr(args, "no_trace", False):
        overrides["write_trace"] = False
    return dataclasses.replace(cfg, **overrides).validate()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmsleep", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a TD3 agent under one reward regime")
    p.add_argument("--regime", help=f"one of {', '.join(REGIMES)} (or rmN)")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int, action="append", help="run seed; repeat for several runs")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", help="output directory (overridden by $RMSLEEP_OUT_DIR)")
    p.add_argument("--no-trace", action="store_true", help="skip the per-slot trace CSV")

    p = sub.add_parser("evaluate", help="greedy rollouts of a checkpoint over scenario seeds")
    p.add_argument("checkpoint", help="checkpoint path (.json header)")
    p.add_argument("--seed", type=int, action="append", help="scenario seed; repeat for several")
    p.add_argument("--n-seeds", type=int, default=10, help="use seeds 0..n-1 when --seed is absent")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", help="write the JSON report here instead of stdout")

    p = sub.add_parser("analyze", help="power cycling and SM distribution from a trace CSV")
    p.add_argument("trace")
    p.add_argument("--last", type=int, help="only the last N episodes")
    p.add_argument("--sleep-modes", type=int, default=4, help="number of sleep modes H")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    return parser


def _emit(obj, out: str | None) -> None:
    if out:
        write_json(out, obj)
    else:
        json.dump(obj, sys.stdout, indent=1, default=str)
        sys.stdout.write("\n")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        if args.command == "train":
            cfg = _load_config(args)
            reports = train(cfg)
            print(json.dumps({"output_dir": str(resolve_output_dir(cfg.output_dir)), "runs": reports}, indent=1))
        elif args.command == "evaluate":
            cfg = run_config_from_kv(read_kv_file(args.config)) if args.config else RunConfig()
            seeds = args.seed or list(range(args.n_seeds))
            path = Path(args.checkpoint)
            _emit(evaluate(path.with_suffix(""), seeds, cfg, args.workers), args.out)
        elif args.command == "analyze":
            _emit(analyze(args.trace, args.sleep_modes, args.last), args.out)
    except (ConfigError, TrainingError, ValueError, FileNotFoundError) as exc:
        print(f"rmsleep: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
