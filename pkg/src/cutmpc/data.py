"""Trials, blocks of relative displacements, feature normalisation and trial files."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sim import DT, StateSample

M = 10
N_FEATURES = 9  # dp(3), f_s(3), f_r(3) per tick
COLUMNS = ("t", "px", "py", "pz", "fsx", "fsy", "fsz", "frx", "fry", "frz")


class DataError(ValueError):
    pass


class TrialParseError(DataError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass
class Trial:
    t: np.ndarray
    p: np.ndarray
    f_s: np.ndarray
    f_r: np.ndarray
    class_name: str
    K_a: np.ndarray = field(default_factory=lambda: np.full(3, 0.003))
    K_p: np.ndarray = field(default_factory=lambda: np.ones(3))
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        for name in ("p", "f_s", "f_r"):
            if getattr(self, name).shape != (n, 3):
                raise DataError(f"{name} must have shape ({n}, 3)")
        if n >= 2:
            gaps = np.diff(self.t)
            if not np.allclose(gaps, DT, rtol=0, atol=1e-9):
                raise DataError("samples must be uniformly spaced at 5 ms")

    def __len__(self):
        return len(self.t)

    def sample(self, i: int) -> StateSample:
        return StateSample(self.t[i], self.p[i], self.f_s[i], self.f_r[i])

    @classmethod
    def from_samples(cls, samples: list[StateSample], class_name: str, **kw) -> "Trial":
        return cls(
            t=np.array([s.t for s in samples], dtype=float),
            p=np.array([s.p for s in samples], dtype=float).reshape(-1, 3),
            f_s=np.array([s.f_s for s in samples], dtype=float).reshape(-1, 3),
            f_r=np.array([s.f_r for s in samples], dtype=float).reshape(-1, 3),
            class_name=class_name,
            **kw,
        )

    def n_blocks(self, m: int = M) -> int:
        return (len(self) - m) // m


@dataclass(frozen=True)
class Block:
    delta_p: np.ndarray  # (M, 3)
    f_s: np.ndarray
    f_r: np.ndarray
    anchor_p: np.ndarray  # last absolute position of the previous block
    block_index: int

    def features(self) -> np.ndarray:
        """Flattened (M*9,) row-major feature vector, per tick [dp, f_s, f_r]."""
        return np.concatenate([self.delta_p, self.f_s, self.f_r], axis=1).ravel()


def form_blocks(trial: Trial, m: int = M) -> list[Block]:
    """Split a trial into non-overlapping blocks starting at sample ``m``.

    The first ``m`` samples only provide the anchor of block 1.
    """
    n = len(trial)
    if n < 2 * m + 1:
        raise DataError(f"trial has {n} samples, need at least {2 * m + 1}")
    blocks = []
    for b in range(1, n // m):
        lo, hi = b * m, (b + 1) * m
        anchor = trial.p[lo - 1]
        blocks.append(
            Block(
                delta_p=trial.p[lo:hi] - anchor,
                f_s=trial.f_s[lo:hi].copy(),
                f_r=trial.f_r[lo:hi].copy(),
                anchor_p=anchor.copy(),
                block_index=b,
            )
        )
    return blocks


def block_arrays(trial: Trial, m: int = M):
    """Vectorised form_blocks: (dp, f_s, f_r) each (n_blocks, m, 3) plus anchors (n_blocks, 3)."""
    nb = trial.n_blocks(m)
    if nb < 1:
        raise DataError(f"trial has {len(trial)} samples, need at least {2 * m + 1}")
    sl = slice(m, (nb + 1) * m)
    p = trial.p[sl].reshape(nb, m, 3)
    anchors = trial.p[m - 1 : nb * m : m]
    dp = p - anchors[:, None, :]
    return dp, trial.f_s[sl].reshape(nb, m, 3), trial.f_r[sl].reshape(nb, m, 3), anchors


def reconstruct_positions(block: Block) -> np.ndarray:
    return block.anchor_p[None, :] + block.delta_p


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray  # (9,)
    std: np.ndarray

    def __post_init__(self):
        if self.mean.shape != (N_FEATURES,) or self.std.shape != (N_FEATURES,):
            raise DataError("normalizer needs 9 means and 9 stds")
        if np.any(self.std <= 0):
            raise DataError("normalizer std entries must be positive")

    # per-tick feature layout tiled over a block
    def tiled(self, m: int = M):
        return np.tile(self.mean, m), np.tile(self.std, m)

    def apply(self, feats: np.ndarray) -> np.ndarray:
        """Normalise (..., M*9) flattened block features or (..., 9) tick features."""
        m = feats.shape[-1] // N_FEATURES
        mu, sd = self.tiled(m)
        return (feats - mu) / sd

    def invert(self, feats: np.ndarray) -> np.ndarray:
        m = feats.shape[-1] // N_FEATURES
        mu, sd = self.tiled(m)
        return feats * sd + mu

    def dp_to_norm(self, dp: np.ndarray) -> np.ndarray:
        """(..., M*3) physical displacements -> normalised displacement features."""
        m = dp.shape[-1] // 3
        return (dp - np.tile(self.mean[:3], m)) / np.tile(self.std[:3], m)

    def dp_from_norm(self, y: np.ndarray) -> np.ndarray:
        m = y.shape[-1] // 3
        return y * np.tile(self.std[:3], m) + np.tile(self.mean[:3], m)

    def cols_to_norm(self, x: np.ndarray, lo: int) -> np.ndarray:
        m = x.shape[-1] // 3
        return (x - np.tile(self.mean[lo : lo + 3], m)) / np.tile(self.std[lo : lo + 3], m)


def fit_normalizer(blocks) -> Normalizer:
    """Population mean/std of the 9 per-tick features over all ticks of ``blocks``.

    ``blocks`` is a list of Block or an array (..., M*9) of flattened features.
    """
    if isinstance(blocks, np.ndarray):
        feats = blocks.reshape(-1, N_FEATURES)
    else:
        if len(blocks) == 0:
            raise DataError("cannot fit a normalizer on an empty set")
        feats = np.concatenate([b.features().reshape(-1, N_FEATURES) for b in blocks])
    if len(feats) == 0:
        raise DataError("cannot fit a normalizer on an empty set")
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    if np.any(std <= 1e-12 * np.maximum(1.0, np.abs(mean))):
        bad = np.flatnonzero(std <= 1e-12 * np.maximum(1.0, np.abs(mean))).tolist()
        raise DataError(f"features {bad} have zero variance")
    return Normalizer(mean, std)


def apply_normalizer(blocks: list[Block], norm: Normalizer) -> np.ndarray:
    return norm.apply(np.stack([b.features() for b in blocks]))


# --- trial files -----------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def trial_to_csv(trial: Trial) -> str:
    buf = io.StringIO()
    buf.write(f"# class_name={trial.class_name}\n")
    buf.write(f"# K_a={' '.join(_fmt(v) for v in trial.K_a)}\n")
    buf.write(f"# K_p={' '.join(_fmt(v) for v in trial.K_p)}\n")
    for k in sorted(trial.meta):
        buf.write(f"# {k}={trial.meta[k]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for i in range(len(trial)):
        w.writerow([_fmt(trial.t[i]), *map(_fmt, trial.p[i]), *map(_fmt, trial.f_s[i]), *map(_fmt, trial.f_r[i])])
    return buf.getvalue()


def save_trial(trial: Trial, path: str | Path) -> None:
    Path(path).write_text(trial_to_csv(trial))


def load_trial(path: str | Path) -> Trial:
    path = Path(path)
    header: dict[str, str] = {}
    rows = []
    seen_cols = False
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                if seen_cols:
                    raise TrialParseError(path, lineno, "metadata after the column header")
                key, sep, val = line[1:].strip().partition("=")
                if not sep:
                    raise TrialParseError(path, lineno, "metadata lines must be '# key=value'")
                header[key.strip()] = val.strip()
                continue
            cells = line.split(",")
            if not seen_cols:
                if tuple(c.strip() for c in cells) != COLUMNS:
                    raise TrialParseError(path, lineno, f"expected header {','.join(COLUMNS)}")
                seen_cols = True
                continue
            if len(cells) != len(COLUMNS):
                raise TrialParseError(path, lineno, f"expected {len(COLUMNS)} values, got {len(cells)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise TrialParseError(path, lineno, str(exc)) from None
    if not seen_cols:
        raise TrialParseError(path, 1, "missing column header")
    if not rows:
        raise TrialParseError(path, 1, "no samples")
    a = np.array(rows)
    if "class_name" not in header:
        raise TrialParseError(path, 1, "missing '# class_name=' metadata")
    meta = {k: v for k, v in header.items() if k not in ("class_name", "K_a", "K_p")}
    kw = {}
    for g in ("K_a", "K_p"):
        if g in header:
            kw[g] = np.array([float(v) for v in header[g].split()])
    try:
        return Trial(a[:, 0], a[:, 1:4], a[:, 4:7], a[:, 7:10], header["class_name"], meta=meta, **kw)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_trials(trials: list[Trial], directory: str | Path, prefix: str = "trial") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, tr in enumerate(trials):
        path = directory / f"{prefix}_{i:04d}.csv"
        save_trial(tr, path)
        paths.append(path)
    return paths


def load_trials(paths) -> list[Trial]:
    if isinstance(paths, (str, Path)) and Path(paths).is_dir():
        paths = sorted(Path(paths).glob("*.csv"))
    return [load_trial(p) for p in paths]
