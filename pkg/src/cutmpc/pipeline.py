"""End-to-end experiment steps shared by the command line and the scripts.

Each step reads the outputs of the previous one from the directories named in an
``ExperimentConfig`` and writes CSV/npz artifacts stamped with the config hash,
seed and package version. A step refuses to touch existing outputs unless
``overwrite`` is set, and is a no-op when they came from the same config.
"""

from __future__ import annotations

import csv
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .collect import collect_dataset
from .config import ExperimentConfig
from .data import load_trial, save_trial
from .mpc import TrialLog, run_closed_loop, summarize
from .nn import Model, load_checkpoint, save_checkpoint
from .sim import ObjectClass, load_class_library, make_class_library, save_class_library
from .train import VARIANTS, BlockDataset, TrainReport, evaluate_mse_vs_horizon, train, write_curve_csv

MANIFEST_COLUMNS = ("file", "class_name", "seen", "split", "tier", "samples", "tracked_to_board")


class PipelineError(RuntimeError):
    pass


def _header_lines(path: Path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            k, _, v = line[1:].strip().partition("=")
            out[k] = v
    return out


def _check_existing(path: Path, cfg: ExperimentConfig, overwrite: bool) -> bool:
    """True when ``path`` already holds this config's output and should be kept."""
    if overwrite or not path.exists():
        return False
    if path.suffix == ".npz":
        stamp = load_checkpoint(path)[2].get("config_hash")
    else:
        stamp = _header_lines(path).get("config_hash")
    if stamp != cfg.config_hash:
        raise PipelineError(f"{path} exists from a different configuration ({stamp}); rerun with --overwrite")
    return True


def _write_rows(path: Path, columns, rows, header: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def _read_rows(path: Path) -> list[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# --- collect -------------------------------------------------------------------------


def manifest_path(cfg: ExperimentConfig) -> Path:
    return cfg.data_dir / "manifest.csv"


def class_library(cfg: ExperimentConfig) -> list[ObjectClass]:
    path = cfg.data_dir / "classes.ini"
    if path.exists():
        return load_class_library(path)
    return make_class_library(cfg.library_seed)


def collect(cfg: ExperimentConfig, overwrite: bool = False) -> Path:
    """Simulate tracking trials for every class and write trial CSVs plus a manifest."""
    out = manifest_path(cfg)
    if _check_existing(out, cfg, overwrite):
        return out
    classes = make_class_library(cfg.library_seed)
    records = collect_dataset(classes, cfg.collect, cfg.seed)
    cfg.data_dir.mkdir(parents=True, exist_ok=True)
    save_class_library(classes, cfg.data_dir / "classes.ini")
    prov = cfg.provenance()
    rows = []
    counters: dict[tuple[str, str], int] = {}
    for rec in records:
        tr = rec.trial
        key = (rec.split, tr.class_name)
        i = counters.get(key, 0)
        counters[key] = i + 1
        rel = Path("trials") / rec.split / f"{tr.class_name}_{i:03d}.csv"
        tr.meta.update(prov)
        (cfg.data_dir / rel).parent.mkdir(parents=True, exist_ok=True)
        save_trial(tr, cfg.data_dir / rel)
        rows.append([rel.as_posix(), tr.class_name, int(rec.seen), rec.split, rec.tier, len(tr), tr.meta["success"]])
    _write_rows(out, MANIFEST_COLUMNS, rows, prov)
    return out


def load_manifest(cfg: ExperimentConfig) -> list[dict]:
    path = manifest_path(cfg)
    if not path.exists():
        raise PipelineError(f"no collected data at {path}; run the collect step first")
    return _read_rows(path)


def load_split(cfg: ExperimentConfig, split: str, seen: bool | None = None):
    rows = [r for r in load_manifest(cfg) if r["split"] == split]
    if seen is not None:
        rows = [r for r in rows if bool(int(r["seen"])) == seen]
    return [load_trial(cfg.data_dir / r["file"]) for r in rows]


# --- train ---------------------------------------------------------------------------


def checkpoint_path(cfg: ExperimentConfig, variant: str) -> Path:
    return cfg.model_dir / f"{variant}.npz"


def train_variant(cfg: ExperimentConfig, variant: str, overwrite: bool = False, datasets=None) -> Path:
    """Train one variant on the training split and save checkpoint and report CSVs.

    ``datasets`` optionally supplies pre-built (train, val) BlockDatasets.
    """
    if variant not in VARIANTS:
        raise PipelineError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    ckpt = checkpoint_path(cfg, variant)
    if _check_existing(ckpt, cfg, overwrite):
        return ckpt
    tcfg = cfg.train_config(variant)
    if datasets is None:
        train_data = BlockDataset.fit(load_split(cfg, "train"))
        val_data = BlockDataset(load_split(cfg, "val"), train_data.normalizer)
    else:
        train_data, val_data = datasets
    model = Model.init(tcfg.arch, cfg.seed)
    report = train(model, train_data, tcfg)
    report.val_mse = evaluate_mse_vs_horizon(model, val_data, cfg.H_max).tolist()
    prov = cfg.provenance()
    cfg.model_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, model, train_data.normalizer, {**prov, "variant": variant, "train": asdict(tcfg)})
    cfg.report_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(cfg.report_dir / f"train_{variant}.csv", {**prov, "variant": variant})
    report.write_summary_csv(cfg.report_dir / f"val_{variant}.csv", {**prov, "variant": variant})
    return ckpt


def load_variant(cfg: ExperimentConfig, variant: str):
    path = checkpoint_path(cfg, variant)
    if not path.exists():
        raise PipelineError(f"no checkpoint for {variant} at {path}; run the train step first")
    return load_checkpoint(path)


def read_train_report(cfg: ExperimentConfig, variant: str) -> TrainReport:
    rows = _read_rows(cfg.report_dir / f"train_{variant}.csv")
    rep = TrainReport(variant)
    rep.train_loss = [float(r["train_loss"]) for r in rows]
    rep.stage_horizon = [int(r["stage_horizon"]) for r in rows]
    rep.lr = [float(r["lr"]) for r in rows]
    return rep


# --- eval ----------------------------------------------------------------------------


def evaluate(cfg: ExperimentConfig, variants=None, overwrite: bool = False) -> tuple[Path, Path]:
    """MSE-vs-horizon curves on the seen test trials and a seen/unseen/total MSE table."""
    if variants is None:
        variants = [v for v in VARIANTS if checkpoint_path(cfg, v).exists()]
    if not variants:
        raise PipelineError(f"no checkpoints in {cfg.model_dir}; run the train step first")
    curve_path = cfg.report_dir / "mse_vs_horizon.csv"
    table_path = cfg.report_dir / "test_mse.csv"
    if _check_existing(curve_path, cfg, overwrite) and _check_existing(table_path, cfg, overwrite):
        return curve_path, table_path
    seen_trials = load_split(cfg, "test", seen=True)
    unseen_trials = load_split(cfg, "test", seen=False)
    curves, rows = {}, []
    for v in variants:
        model, norm, _ = load_variant(cfg, v)
        seen = BlockDataset(seen_trials, norm)
        curves[v] = evaluate_mse_vs_horizon(model, seen, cfg.H_max)
        s, u, t = generalization_mse(model, norm, seen_trials, unseen_trials, cfg.H_table)
        rows.append([v, repr(s), repr(u), repr(t)])
    prov = {**cfg.provenance(), "units": "mm^2"}
    cfg.report_dir.mkdir(parents=True, exist_ok=True)
    write_curve_csv(curve_path, curves, prov)
    _write_rows(table_path, ("model", "seen", "unseen", "total"), rows, {**prov, "horizon": cfg.H_table})
    return curve_path, table_path


def generalization_mse(model, norm, seen_trials, unseen_trials, horizon: int):
    """Mean rollout MSE (mm^2) over ``horizon`` blocks on seen, unseen and all test windows."""
    seen = BlockDataset(seen_trials, norm)
    unseen = BlockDataset(unseen_trials, norm)
    s = evaluate_mse_vs_horizon(model, seen, horizon)[-1]
    u = evaluate_mse_vs_horizon(model, unseen, horizon)[-1]
    ns, nu = len(seen.windows(horizon)), len(unseen.windows(horizon))
    return float(s), float(u), float((s * ns + u * nu) / (ns + nu))


# --- mpc -----------------------------------------------------------------------------


def mpc_trial_seed(cfg: ExperimentConfig, class_index: int, i: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, 7919, class_index, i]).generate_state(1)[0])


def run_mpc(cfg: ExperimentConfig, variant: str = "lstm-lr-c", overwrite: bool = False, classes=None) -> Path:
    """Seeded closed-loop cuts on every class; logs plus long and wide summaries."""
    summary_path = cfg.report_dir / f"mpc_summary_{variant}.csv"
    if _check_existing(summary_path, cfg, overwrite):
        return summary_path
    model, norm, _ = load_variant(cfg, variant)
    classes = classes or class_library(cfg)
    prov = cfg.provenance()
    log_dir = cfg.report_dir / "mpc" / variant
    log_dir.mkdir(parents=True, exist_ok=True)
    logs: list[TrialLog] = []
    for ci, obj in enumerate(classes):
        for i in range(cfg.mpc_trials_per_class):
            seed = mpc_trial_seed(cfg, ci, i)
            lg = run_closed_loop(obj, model, norm, cfg.mpc, seed, cfg.mpc_max_duration, model_tag=variant)
            lg.write_csv(log_dir / f"{obj.name}_{i}.csv", {**prov, "trial_seed": seed})
            logs.append(lg)
    rows = summarize(logs)
    _write_rows(
        summary_path,
        ("model", "class", "trials", "successes", "mean_cost", "mean_lateral_path_m"),
        [[r["model"], r["class"], r["trials"], r["successes"], repr(r["mean_cost"]),
          repr(float(np.mean([lg.lateral_path_length() for lg in logs if lg.class_name == r["class"]])))]
         for r in rows],
        prov,
    )
    write_mpc_table(cfg.report_dir / f"mpc_table_{variant}.csv", rows, [c.name for c in classes], prov)
    return summary_path


def write_mpc_table(path: Path, rows: list[dict], class_names: list[str], header: dict) -> None:
    """One row per model: mean cost per class and the average; failed trials are excluded
    from means and a class with any failure is marked with '*' per failed trial."""
    models = sorted({r["model"] for r in rows})
    out = []
    for m in models:
        by_cls = {r["class"]: r for r in rows if r["model"] == m}
        cells, means = [], []
        for c in class_names:
            r = by_cls.get(c)
            if r is None:
                cells.append("")
                continue
            fails = r["trials"] - r["successes"]
            cells.append(("nan" if np.isnan(r["mean_cost"]) else f"{r['mean_cost']:.6g}") + "*" * fails)
            if not np.isnan(r["mean_cost"]):
                means.append(r["mean_cost"])
        cells.append(f"{np.mean(means):.6g}" if means else "nan")
        out.append([m, *cells])
    _write_rows(path, ("model", *class_names, "avg"), out, header)


# --- report --------------------------------------------------------------------------


def report(cfg: ExperimentConfig) -> Path:
    """Collect the CSV outputs into one plain-text summary."""
    d = cfg.report_dir
    parts = [f"config_hash={cfg.config_hash} seed={cfg.seed}", ""]
    table = d / "test_mse.csv"
    if table.exists():
        parts.append(f"Test MSE at {cfg.H_table} blocks (mm^2)")
        parts.append(f"{'model':<10} {'seen':>12} {'unseen':>12} {'total':>12}")
        for r in _read_rows(table):
            parts.append(f"{r['model']:<10} {float(r['seen']):12.6f} {float(r['unseen']):12.6f} {float(r['total']):12.6f}")
        parts.append("")
    curves = d / "mse_vs_horizon.csv"
    if curves.exists():
        rows = _read_rows(curves)
        parts.append("MSE vs horizon on seen test trials (mm^2)")
        for m in dict.fromkeys(r["model"] for r in rows):
            vals = [float(r["mse_mm2"]) for r in rows if r["model"] == m]
            parts.append(f"{m:<10} " + " ".join(f"{v:.5f}" for v in vals))
        parts.append("")
    for path in sorted(d.glob("mpc_table_*.csv")):
        rows = _read_rows(path)
        parts.append(f"Closed-loop mean cost ({path.stem[len('mpc_table_'):]}); '*' marks a failed trial")
        if rows:
            cols = list(rows[0])
            parts.append("  ".join(f"{c:>10}" for c in cols))
            for r in rows:
                parts.append("  ".join(f"{r[c]:>10}" for c in cols))
        parts.append("")
    if len(parts) == 2:
        raise PipelineError(f"nothing to report in {d}; run eval or mpc first")
    out = d / "report.txt"
    out.write_text("\n".join(parts))
    return out


# --- whole offline study -------------------------------------------------------------


def read_curves(cfg: ExperimentConfig) -> dict[str, np.ndarray]:
    rows = _read_rows(cfg.report_dir / "mse_vs_horizon.csv")
    out: dict[str, list] = {}
    for r in rows:
        out.setdefault(r["model"], []).append(float(r["mse_mm2"]))
    return {k: np.array(v) for k, v in out.items()}


def read_table(cfg: ExperimentConfig) -> dict[str, tuple[float, float, float]]:
    return {r["model"]: (float(r["seen"]), float(r["unseen"]), float(r["total"])) for r in _read_rows(cfg.report_dir / "test_mse.csv")}


def offline_study(cfg: ExperimentConfig, variants=VARIANTS, overwrite: bool = False) -> dict:
    """Collect, train every variant and evaluate; returns the curves and the MSE table."""
    collect(cfg, overwrite)
    datasets = None
    if overwrite or not all(_check_existing(checkpoint_path(cfg, v), cfg, False) for v in variants):
        train_data = BlockDataset.fit(load_split(cfg, "train"))
        datasets = (train_data, BlockDataset(load_split(cfg, "val"), train_data.normalizer))
    for v in variants:
        train_variant(cfg, v, overwrite, datasets)
    evaluate(cfg, list(variants), overwrite)
    return {"curves": read_curves(cfg), "table": read_table(cfg)}
