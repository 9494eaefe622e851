"""Direct and curriculum training of the block dynamics models, plus horizon evaluation."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import M, Normalizer, Trial, block_arrays, fit_normalizer
from .nn import AdamState, Model, adam_step, assemble, flat_grad, mse_loss_and_grads, unroll

VARIANTS = ("rnn", "lstm", "lstm-c", "lstm-lr-c")

# lr, weight decay, lr decay per horizon transition
HYPERPARAMS = {
    "rnn": (1e-4, 5e-4, 1.0),
    "lstm": (2e-4, 3e-4, 1.0),
    "lstm-c": (1e-4, 2e-4, 1.0),
    "lstm-lr-c": (1e-4, 3e-4, 0.5),
}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    variant: str
    lr: float
    wd: float
    gamma: float = 1.0
    H_target: int = 5
    epochs_per_stage: int = 10
    final_stage_epochs: int = 20
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if not self.lr > 0 or self.wd < 0 or not 0 < self.gamma <= 1 or self.H_target < 1:
            raise ValueError("need lr > 0, wd >= 0, 0 < gamma <= 1, H_target >= 1")
        if self.batch_size < 1 or self.epochs_per_stage < 0 or self.final_stage_epochs < 0:
            raise ValueError("batch_size and epoch counts must be non-negative")

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "TrainConfig":
        lr, wd, gamma = HYPERPARAMS[variant]
        kw = dict(variant=variant, lr=lr, wd=wd, gamma=gamma)
        kw.update(overrides)
        return cls(**kw)

    @property
    def arch(self) -> str:
        return "rnn" if self.variant == "rnn" else "lstm"

    @property
    def curriculum(self) -> bool:
        return self.variant in ("lstm-c", "lstm-lr-c")

    def total_epochs(self) -> int:
        return self.epochs_per_stage * (self.H_target - 1) + self.final_stage_epochs

    def schedule(self) -> list[tuple[int, int, float]]:
        """(horizon, epochs, lr) per stage."""
        if not self.curriculum:
            return [(self.H_target, self.total_epochs(), self.lr)]
        gamma = self.gamma if self.variant == "lstm-lr-c" else 1.0
        stages = [(h, self.epochs_per_stage, self.lr * gamma ** (h - 1)) for h in range(1, self.H_target)]
        stages.append((self.H_target, self.final_stage_epochs, self.lr * gamma ** (self.H_target - 1)))
        return stages


@dataclass
class TrainReport:
    variant: str
    train_loss: list = field(default_factory=list)
    stage_horizon: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    wall_time: float = 0.0
    val_mse: list = field(default_factory=list)  # per horizon, mm^2

    def write_csv(self, path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "stage_horizon", "lr", "train_loss"])
            for i, (h, lr, loss) in enumerate(zip(self.stage_horizon, self.lr, self.train_loss), start=1):
                w.writerow([i, h, repr(lr), repr(loss)])

    def write_summary_csv(self, path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["horizon", "val_mse"])
            for h, v in enumerate(self.val_mse, start=1):
                w.writerow([h, repr(v)])


class BlockDataset:
    """All blocks of a set of trials in normalised form, flattened with per-trial offsets.

    The model token for block b is [dp_b, f_s_b, f_r_{b+1}]: the reference force
    that acts while the next block is being produced.
    """

    def __init__(self, trials: list[Trial], normalizer: Normalizer):
        if not trials:
            raise ValueError("empty dataset")
        self.normalizer = normalizer
        self.trials = trials
        dps, fss, frs, anchors, lens = [], [], [], [], []
        for tr in trials:
            dp, fs, fr, anc = block_arrays(tr)
            nb = len(dp)
            dps.append(dp.reshape(nb, -1))
            fss.append(fs.reshape(nb, -1))
            frs.append(fr.reshape(nb, -1))
            anchors.append(anc)
            lens.append(nb)
        self.lengths = np.array(lens)
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)[:-1]])
        self.dp_phys = np.concatenate(dps)
        self.dp = normalizer.dp_to_norm(self.dp_phys)
        self.fs = normalizer.cols_to_norm(np.concatenate(fss), 3)
        self.fr = normalizer.cols_to_norm(np.concatenate(frs), 6)
        self.anchors = np.concatenate(anchors)

    @classmethod
    def fit(cls, trials: list[Trial]) -> "BlockDataset":
        feats = []
        for tr in trials:
            dp, fs, fr, _ = block_arrays(tr)
            feats.append(np.concatenate([dp, fs, fr], axis=2).reshape(-1, 9))
        return cls(trials, fit_normalizer(np.concatenate(feats)))

    def windows(self, horizon: int) -> np.ndarray:
        """Global block indices of every seed block with ``horizon`` successors in its trial."""
        out = [off + np.arange(n - horizon) for off, n in zip(self.offsets, self.lengths) if n > horizon]
        return np.concatenate(out) if out else np.zeros(0, dtype=int)

    def tokens(self, g: np.ndarray) -> np.ndarray:
        return assemble(self.dp[g], self.fs[g], self.fr[g + 1])

    def warm_states(self, model: Model):
        """Teacher-forced hidden state *before* every block, per trial from a zero state.

        Returned as a nested tuple mirroring the model state, each array (n_blocks_total, dim).
        """
        n_tr = len(self.lengths)
        total = int(self.lengths.sum())
        state = [list(s) for s in model.zero_state(n_tr)]
        flat = tuple(tuple(np.zeros((total, a.shape[1])) for a in s) for s in state)
        for b in range(int(self.lengths.max())):
            alive = np.flatnonzero(self.lengths > b)
            g = self.offsets[alive] + b
            for s_out, s in zip(flat, state):
                for dst, src in zip(s_out, s):
                    dst[g] = src[alive]
            live = np.flatnonzero(self.lengths > b + 1)
            if len(live) == 0:
                break
            sub = tuple(tuple(a[live] for a in s) for s in state)
            _, new, _ = model.step(self.tokens(self.offsets[live] + b), sub)
            for s, ns in zip(state, new):
                for j, a in enumerate(ns):
                    s[j][live] = a
        return flat

    def batch(self, g: np.ndarray, horizon: int, states):
        steps = g[:, None] + np.arange(1, horizon + 1)[None, :]
        h0 = tuple(tuple(a[g] for a in s) for s in states)
        return self.dp[g], self.fs[g], self.fr[steps], self.dp[steps], h0


def _train_stages(model: Model, data: BlockDataset, cfg: TrainConfig, stages, report: TrainReport):
    rng = np.random.default_rng(cfg.seed)
    opt = AdamState(lr=cfg.lr, wd=cfg.wd)
    t0 = time.perf_counter()
    for horizon, epochs, lr in stages:
        opt.lr = lr
        win = data.windows(horizon)
        if len(win) == 0:
            raise TrainingError(f"no training windows of horizon {horizon}")
        for _ in range(epochs):
            states = data.warm_states(model)
            order = rng.permutation(win)
            total, count = 0.0, 0
            for lo in range(0, len(order), cfg.batch_size):
                g = order[lo : lo + cfg.batch_size]
                dp0, fs, fr, tgt, h0 = data.batch(g, horizon, states)
                loss, grads = mse_loss_and_grads(model, dp0, fs, fr, tgt, h0)
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite training loss at horizon {horizon}")
                adam_step({"theta": model.flat}, {"theta": flat_grad(grads)}, opt)
                total += loss * len(g)
                count += len(g)
            report.train_loss.append(total / count)
            report.stage_horizon.append(horizon)
            report.lr.append(lr)
    report.wall_time += time.perf_counter() - t0
    return report


def train_direct(model: Model, data: BlockDataset, cfg: TrainConfig) -> TrainReport:
    """Train at the target horizon for the same epoch budget the curriculum would use."""
    if cfg.curriculum:
        raise ValueError(f"train_direct does not run curriculum variant {cfg.variant!r}")
    return _train_stages(model, data, cfg, cfg.schedule(), TrainReport(cfg.variant))


def train_curriculum(model: Model, data: BlockDataset, cfg: TrainConfig) -> TrainReport:
    """Horizon curriculum 1..H_target, decaying lr by gamma at each transition for lstm-lr-c."""
    if not cfg.curriculum:
        raise ValueError(f"train_curriculum needs a curriculum variant, got {cfg.variant!r}")
    return _train_stages(model, data, cfg, cfg.schedule(), TrainReport(cfg.variant))


def train(model: Model, data: BlockDataset, cfg: TrainConfig) -> TrainReport:
    return (train_curriculum if cfg.curriculum else train_direct)(model, data, cfg)


def predict_windows(model: Model, data: BlockDataset, g: np.ndarray, horizon: int, chunk: int = 4096):
    """Rolled-out predictions for seed blocks ``g`` in physical metres, shape (len(g), horizon, 30)."""
    states = data.warm_states(model)
    out = np.empty((len(g), horizon, M * 3))
    for lo in range(0, len(g), chunk):
        gg = g[lo : lo + chunk]
        dp0, fs, fr, _, h0 = data.batch(gg, horizon, states)
        ys, _, _ = unroll(model, dp0, fs, fr, h0)
        out[lo : lo + chunk] = data.normalizer.dp_from_norm(ys)
    return out


def evaluate_mse_vs_horizon(model: Model, data: BlockDataset, H_max: int = 15) -> np.ndarray:
    """Rollout MSE (mm^2) over the first h predicted blocks, for h = 1..H_max.

    Every value is averaged over the same set of windows, those with H_max successors.
    """
    if H_max < 1:
        raise ValueError("H_max must be >= 1")
    g = data.windows(H_max)
    if len(g) == 0:
        raise ValueError(f"no windows with {H_max} successor blocks")
    pred = predict_windows(model, data, g, H_max)
    truth = data.dp_phys[g[:, None] + np.arange(1, H_max + 1)[None, :]]
    per_block = ((pred - truth) * 1e3) ** 2  # mm^2
    per_block = per_block.mean(axis=(0, 2))
    return np.cumsum(per_block) / np.arange(1, H_max + 1)


def mse_at_horizon(model: Model, data: BlockDataset, horizon: int = 5) -> float:
    return float(evaluate_mse_vs_horizon(model, data, horizon)[-1])


def write_curve_csv(path: str | Path, curves: dict[str, np.ndarray], header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "horizon", "mse_mm2"])
        for name, curve in curves.items():
            for h, v in enumerate(curve, start=1):
                w.writerow([name, h, repr(float(v))])
