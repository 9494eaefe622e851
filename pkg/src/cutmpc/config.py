"""Experiment configuration: one key=value file with sections."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .collect import CollectionPlan
from .mpc import MpcConfig
from .train import VARIANTS, TrainConfig


@dataclass
class ExperimentConfig:
    data_dir: Path = Path("runs/data")
    model_dir: Path = Path("runs/models")
    report_dir: Path = Path("runs/reports")
    seed: int = 0
    library_seed: int = 0
    collect: CollectionPlan = field(default_factory=CollectionPlan)
    batch_size: int = 32
    H_target: int = 5
    epochs_per_stage: int = 10
    final_stage_epochs: int = 20
    train_overrides: dict = field(default_factory=dict)  # variant -> {lr, wd, gamma}
    H_max: int = 15
    H_table: int = 5
    mpc: MpcConfig = field(default_factory=MpcConfig)
    mpc_trials_per_class: int = 5
    mpc_max_duration: float = 60.0
    source_text: str = ""

    def train_config(self, variant: str) -> TrainConfig:
        kw = dict(
            H_target=self.H_target,
            epochs_per_stage=self.epochs_per_stage,
            final_stage_epochs=self.final_stage_epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        kw.update(self.train_overrides.get(variant, {}))
        return TrainConfig.for_variant(variant, **kw)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def provenance(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed, "version": __version__}

    def canonical(self) -> str:
        """Stable text form of every setting that affects results (paths excluded)."""
        parts = [f"seed={self.seed}", f"library_seed={self.library_seed}"]
        parts += [f"collect.{k}={v!r}" for k, v in sorted(asdict(self.collect).items())]
        parts += [f"train.{k}={getattr(self, k)!r}" for k in ("batch_size", "H_target", "epochs_per_stage", "final_stage_epochs")]
        parts += [f"train.{v}.{k}={x!r}" for v in sorted(self.train_overrides) for k, x in sorted(self.train_overrides[v].items())]
        parts += [f"eval.H_max={self.H_max}", f"eval.H_table={self.H_table}"]
        parts += [f"mpc.{k}={v!r}" for k, v in sorted(asdict(self.mpc).items())]
        parts += [f"mpc.trials_per_class={self.mpc_trials_per_class}", f"mpc.max_duration={self.mpc_max_duration!r}"]
        return "\n".join(parts)


def _triple(raw: str) -> tuple[float, float, float]:
    vals = tuple(float(v) for v in raw.replace(",", " ").split())
    if len(vals) != 3:
        raise ValueError(f"expected three numbers, got {raw!r}")
    return vals


def load_config(path: str | Path | None = None, seed: int | None = None) -> ExperimentConfig:
    """Read an experiment config; missing keys keep their defaults. Relative paths resolve
    against the config file's directory."""
    cp = configparser.ConfigParser()
    base = Path.cwd()
    text = ""
    if path is not None:
        path = Path(path)
        text = path.read_text()
        cp.read_string(text, source=str(path))
        base = path.parent
    cfg = ExperimentConfig(source_text=text)

    if cp.has_section("paths"):
        for key in ("data_dir", "model_dir", "report_dir"):
            if key in cp["paths"]:
                setattr(cfg, key, base / cp["paths"][key])
    else:
        cfg.data_dir, cfg.model_dir, cfg.report_dir = (base / p for p in (cfg.data_dir, cfg.model_dir, cfg.report_dir))
    if cp.has_section("experiment"):
        cfg.seed = cp["experiment"].getint("seed", cfg.seed)
    if cp.has_section("sim"):
        cfg.library_seed = cp["sim"].getint("library_seed", cfg.library_seed)
    if cp.has_section("collect"):
        sec = cp["collect"]
        kw = {}
        for f in fields(CollectionPlan):
            if f.name in sec:
                kw[f.name] = _triple(sec[f.name]) if f.name == "fr_limit" else type(getattr(cfg.collect, f.name))(sec[f.name])
        cfg.collect = CollectionPlan(**kw)
    if cp.has_section("train"):
        sec = cp["train"]
        for key in ("batch_size", "H_target", "epochs_per_stage", "final_stage_epochs"):
            if key in sec:
                setattr(cfg, key, sec.getint(key))
    for variant in VARIANTS:
        name = f"train.{variant}"
        if cp.has_section(name):
            cfg.train_overrides[variant] = {k: float(v) for k, v in cp[name].items() if k in ("lr", "wd", "gamma")}
    if cp.has_section("eval"):
        cfg.H_max = cp["eval"].getint("H_max", cfg.H_max)
        cfg.H_table = cp["eval"].getint("H_table", cfg.H_table)
    if cp.has_section("mpc"):
        sec = cp["mpc"]
        kw = {}
        for f in fields(MpcConfig):
            if f.name not in sec:
                continue
            cur = getattr(cfg.mpc, f.name)
            if isinstance(cur, tuple):
                kw[f.name] = _triple(sec[f.name])
            elif isinstance(cur, bool):
                kw[f.name] = sec.getboolean(f.name)
            else:
                kw[f.name] = type(cur)(sec[f.name])
        cfg.mpc = MpcConfig(**kw)
        cfg.mpc_trials_per_class = sec.getint("trials_per_class", cfg.mpc_trials_per_class)
        cfg.mpc_max_duration = sec.getfloat("max_duration", cfg.mpc_max_duration)
    if seed is not None:
        cfg.seed = seed
    return cfg
