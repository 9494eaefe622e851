"""Shared argument handling for the experiment scripts."""

import argparse
from pathlib import Path

from cutmpc.config import ExperimentConfig, load_config


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--root", type=Path, default=Path("runs/study"), help="one sub-directory per seed")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--config", help="base config; its paths are replaced per seed")
    p.add_argument("--overwrite", action="store_true")
    return p


def seed_config(args, seed: int) -> ExperimentConfig:
    cfg = load_config(args.config, seed=seed)
    d = args.root / f"seed{seed}"
    cfg.data_dir, cfg.model_dir, cfg.report_dir = d / "data", d / "models", d / "reports"
    return cfg
