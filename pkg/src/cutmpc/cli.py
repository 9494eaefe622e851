"""Command-line driver: collect, train, eval, mpc, report."""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .config import load_config
from .data import DataError
from .mpc import PlanningError
from .train import VARIANTS, TrainingError


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (INI sections)")
    common.add_argument("--seed", type=int, help="global seed, overrides the config")
    common.add_argument("--overwrite", action="store_true", help="replace existing outputs")

    p = argparse.ArgumentParser(prog="cutmpc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="simulate tracking trials and write the dataset")
    t = sub.add_parser("train", parents=[common], help="train a dynamics model variant")
    t.add_argument("--variant", choices=VARIANTS + ("all",), default="all")
    e = sub.add_parser("eval", parents=[common], help="horizon curves and seen/unseen MSE table")
    e.add_argument("--variant", choices=VARIANTS, action="append", help="repeatable; default: all trained")
    m = sub.add_parser("mpc", parents=[common], help="closed-loop cutting trials on every class")
    m.add_argument("--variant", choices=VARIANTS, default="lstm-lr-c")
    sub.add_parser("report", parents=[common], help="summarise existing CSV outputs")
    return p


def run(args) -> str:
    cfg = load_config(args.config, seed=args.seed)
    if args.command == "collect":
        return str(pipeline.collect(cfg, args.overwrite))
    if args.command == "train":
        variants = VARIANTS if args.variant == "all" else (args.variant,)
        return "\n".join(str(pipeline.train_variant(cfg, v, args.overwrite)) for v in variants)
    if args.command == "eval":
        return "\n".join(map(str, pipeline.evaluate(cfg, args.variant, args.overwrite)))
    if args.command == "mpc":
        return str(pipeline.run_mpc(cfg, args.variant, args.overwrite))
    return str(pipeline.report(cfg))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = run(args)
    except (pipeline.PipelineError, DataError, TrainingError, PlanningError, ValueError, OSError) as exc:
        print(f"cutmpc {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
