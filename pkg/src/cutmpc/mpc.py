"""Shooting-method receding-horizon control on a learned block dynamics model."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .control import damping_control
from .data import M, Block, Normalizer, Trial
from .nn import Model, assemble, unroll
from .sim import DT, ObjectClass, PlantState, is_success, step_plant


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class MpcConfig:
    H_b: int = 5
    n_candidates: int = 25
    c_cut: float = 1.0
    c_saw: float = 10.0
    c_v: float = 1e-8
    d: float = 0.02
    epsilon: float = 0.005
    p_table: float = 0.0
    p_center: float = 0.0
    fr_low: tuple[float, float, float] = (0.0, -15.0, 0.0)
    fr_high: tuple[float, float, float] = (0.0, 15.0, 15.0)
    sample_sigma: float = 4.0
    seed: int = 0
    K_a: float = 0.003
    success_tol: float = 2e-3
    enforce_deadline: bool = False

    def __post_init__(self):
        if min(self.c_cut, self.c_saw, self.c_v) < 0:
            raise ValueError("cost weights must be non-negative")
        if not self.d > self.epsilon > 0:
            raise ValueError("need d > epsilon > 0")
        if self.n_candidates < 1 or self.H_b < 1:
            raise ValueError("need n_candidates >= 1 and H_b >= 1")
        if np.any(np.asarray(self.fr_low) > np.asarray(self.fr_high)):
            raise ValueError("force bounds are inverted")


def cost_terms(positions, fr, cfg: MpcConfig) -> np.ndarray:
    """Per-sequence (cut, saw, effort) cost terms; leading axes are batch axes.

    positions: (..., N, 3) absolute positions; fr: (..., N', 3) reference forces.
    """
    positions = np.asarray(positions, dtype=float)
    fr = np.asarray(fr, dtype=float)
    cut = cfg.c_cut * np.sum((positions[..., 2] - cfg.p_table) ** 2, axis=-1)
    excess = np.maximum(0.0, np.abs(positions[..., 1] - cfg.p_center) - cfg.d + cfg.epsilon)
    saw = cfg.c_saw * np.sum(excess**2, axis=-1)
    effort = cfg.c_v * np.sum(fr**2, axis=(-2, -1))
    return np.stack([cut, saw, effort], axis=-1)


def cost(predicted_positions, fr_plan, cfg: MpcConfig) -> float:
    pos = np.asarray(predicted_positions, dtype=float).reshape(-1, 3)
    fr = np.asarray(fr_plan, dtype=float).reshape(-1, 3)
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(fr))):
        raise ValueError("cost inputs must be finite")
    return float(cost_terms(pos, fr, cfg).sum())


def sample_candidates(prev_best, cfg: MpcConfig, rng: np.random.Generator) -> np.ndarray:
    """Constant reference forces, one per candidate, shape (n_candidates, 3).

    With a previous best, it is candidate 0 and the rest are Gaussian perturbations of it;
    otherwise all are uniform within the bounds. The X component is always zero.
    """
    lo = np.asarray(cfg.fr_low, dtype=float)
    hi = np.asarray(cfg.fr_high, dtype=float)
    n = cfg.n_candidates
    if prev_best is None:
        c = rng.uniform(lo, hi, size=(n, 3))
    else:
        prev = np.asarray(prev_best, dtype=float)
        c = np.clip(prev + rng.normal(0.0, cfg.sample_sigma, size=(n, 3)), lo, hi)
        c[0] = prev
    c[:, 0] = 0.0
    return c


def expand_plan(force, H_b: int) -> np.ndarray:
    """A constant force held over H_b blocks, shape (H_b, M, 3)."""
    return np.broadcast_to(np.asarray(force, dtype=float), (H_b, M, 3)).copy()


def chain_positions(anchor, dps):
    """Absolute positions of consecutive predicted blocks, each anchored at its predecessor's end.

    anchor: (..., 3); dps: (..., H, M, 3) -> (..., H, M, 3).
    """
    ends = np.cumsum(dps[..., -1, :], axis=-2)
    starts = np.concatenate([np.zeros_like(ends[..., :1, :]), ends[..., :-1, :]], axis=-2)
    return anchor[..., None, None, :] + starts[..., None, :] + dps


@dataclass
class PlanResult:
    fr_star: np.ndarray
    cost: float
    index: int
    candidates: np.ndarray
    costs: np.ndarray


def plan(
    model: Model,
    normalizer: Normalizer,
    current_block: Block,
    prev_best,
    cfg: MpcConfig,
    rng: np.random.Generator,
    h=None,
    candidates=None,
) -> PlanResult:
    """Score every candidate by rolling it through the model and return the cheapest.

    ``h`` is the model state before ``current_block``. Ties go to the lowest index.
    """
    if candidates is None:
        candidates = sample_candidates(prev_best, cfg, rng)
    candidates = np.asarray(candidates, dtype=float)
    k = len(candidates)
    H = cfg.H_b
    fr = np.broadcast_to(candidates[:, None, None, :], (k, H, M, 3))
    dp0 = np.repeat(normalizer.dp_to_norm(current_block.delta_p.reshape(1, -1)), k, axis=0)
    fs = np.repeat(normalizer.cols_to_norm(current_block.f_s.reshape(1, -1), 3), k, axis=0)
    frn = normalizer.cols_to_norm(fr.reshape(k, H, M * 3), 6)
    if h is None:
        h = model.zero_state(1)
    hk = tuple(tuple(np.repeat(a, k, axis=0) for a in s) for s in h)
    with np.errstate(all="ignore"):
        ys, _, _ = unroll(model, dp0, fs, frn, hk)
        dps = normalizer.dp_from_norm(ys).reshape(k, H, M, 3)
        anchor = current_block.anchor_p + current_block.delta_p[-1]
        pos = chain_positions(np.broadcast_to(anchor, (k, 3)), dps)
        costs = cost_terms(pos.reshape(k, H * M, 3), fr.reshape(k, H * M, 3), cfg).sum(axis=-1)
    costs = np.where(np.isfinite(costs), costs, np.inf)
    if not np.any(np.isfinite(costs)):
        raise PlanningError("every candidate produced a non-finite prediction")
    i = int(np.argmin(costs))
    return PlanResult(candidates[i].copy(), float(costs[i]), i, candidates, costs)


# --- closed loop -------------------------------------------------------------------------


@dataclass
class BlockRecord:
    t: float
    p: np.ndarray
    f_s: np.ndarray
    fr_star: np.ndarray
    predicted_cost: float
    sample_index: int
    plan_seconds: float
    deadline_miss: bool
    realized: np.ndarray = field(default_factory=lambda: np.zeros(3))  # cut, saw, effort


@dataclass
class TrialLog:
    samples: Trial
    blocks: list[BlockRecord]
    success: bool
    duration: float
    class_name: str
    model_tag: str
    failure: str = ""

    @property
    def block_costs(self) -> np.ndarray:
        return np.array([b.realized.sum() for b in self.blocks])

    @property
    def mean_cost(self) -> float:
        c = self.block_costs
        return float(c.mean()) if len(c) else float("nan")

    def lateral_path_length(self) -> float:
        return float(np.abs(np.diff(self.samples.p[:, 1])).sum())

    def write_csv(self, path, header: dict | None = None) -> None:
        plan_at = {b.sample_index: b for b in self.blocks}
        s = self.samples
        with open(path, "w", newline="") as fh:
            meta = {"class_name": self.class_name, "model": self.model_tag, "success": int(self.success),
                    "duration": repr(self.duration), "mean_cost": repr(self.mean_cost)}
            if self.failure:
                meta["failure"] = self.failure
            meta.update(header or {})
            for k, v in meta.items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "px", "py", "pz", "fsx", "fsy", "fsz", "frx", "fry", "frz",
                        "replan", "predicted_cost", "block_cost", "deadline_miss"])
            for i in range(len(s)):
                row = [repr(float(v)) for v in (s.t[i], *s.p[i], *s.f_s[i], *s.f_r[i])]
                b = plan_at.get(i)
                if b is None:
                    row += ["0", "", "", ""]
                else:
                    row += ["1", repr(b.predicted_cost), repr(float(b.realized.sum())), str(int(b.deadline_miss))]
                w.writerow(row)


def _block_at(p, fs, fr, k):
    """Block made of samples [k-M, k) anchored at sample k-M-1."""
    anchor = p[k - M - 1]
    return Block(p[k - M : k] - anchor, fs[k - M : k].copy(), fr[k - M : k].copy(), anchor.copy(), k // M - 1)


def run_closed_loop(
    obj: ObjectClass,
    model: Model,
    normalizer: Normalizer,
    cfg: MpcConfig,
    seed: int = 0,
    max_duration: float = 60.0,
    clearance: float = 0.02,
    model_tag: str = "",
) -> TrialLog:
    """Cut ``obj`` from above with the MPC choosing one reference force per block.

    The damping controller runs every tick against live force readings; the planner
    runs every M ticks on the last completed block. The first two blocks hold f_r = 0.
    """
    ss = np.random.SeedSequence([seed, cfg.seed])
    plant_rng, plan_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    K_a = np.full(3, cfg.K_a)
    state = PlantState.above(obj, y=cfg.p_center, clearance=clearance)
    n_max = int(round(max_duration / DT))
    p = np.zeros((n_max + 1, 3))
    fs_log = np.zeros((n_max + 1, 3))
    fr_log = np.zeros((n_max + 1, 3))
    f_s = plant_rng.normal(0.0, obj.noise_sigma, size=3) if obj.noise_sigma > 0 else np.zeros(3)
    f_r = np.zeros(3)
    h = model.zero_state(1)
    prev_block = None
    prev_best = None
    records: list[BlockRecord] = []
    success = False
    failure = ""
    k = 0
    while k < n_max:
        p[k], fs_log[k] = state.p, f_s
        if k >= 2 * M and k % M == 0:
            block = _block_at(p, fs_log, fr_log, k)
            if prev_block is not None:
                # advance the model state over the previous block, with the force that followed it
                token = assemble(
                    normalizer.dp_to_norm(prev_block.delta_p.reshape(1, -1)),
                    normalizer.cols_to_norm(prev_block.f_s.reshape(1, -1), 3),
                    normalizer.cols_to_norm(block.f_r.reshape(1, -1), 6),
                )
                _, h, _ = model.step(token, h)
            t0 = time.perf_counter()
            try:
                res = plan(model, normalizer, block, prev_best, cfg, plan_rng, h)
            except PlanningError as exc:
                failure = f"planning error: {exc}"
                break
            elapsed = time.perf_counter() - t0
            miss = elapsed > M * DT
            if not (miss and cfg.enforce_deadline and prev_best is not None):
                f_r = res.fr_star
                prev_best = res.fr_star
            records.append(BlockRecord(k * DT, state.p.copy(), f_s.copy(), f_r.copy(), res.cost, k, elapsed, miss))
            prev_block = block
        fr_log[k] = f_r
        u = damping_control(f_s, f_r, K_a)
        state, f_s = step_plant(state, u, obj, DT, plant_rng)
        k += 1
        if is_success(state, obj, cfg.success_tol):
            success = True
            p[k], fs_log[k], fr_log[k] = state.p, f_s, f_r
            k += 1
            break
    n = k
    for i, b in enumerate(records):
        hi = records[i + 1].sample_index if i + 1 < len(records) else n
        lo = b.sample_index
        b.realized = cost_terms(p[lo + 1 : min(hi + 1, n)], fr_log[lo:hi], cfg)
    samples = Trial(np.arange(n) * DT, p[:n].copy(), fs_log[:n].copy(), fr_log[:n].copy(), obj.name,
                    K_a=K_a, meta={"seed": seed})
    if not success and not failure:
        failure = "timeout"
    return TrialLog(samples, records, success, n * DT, obj.name, model_tag, failure)


def summarize(logs: list[TrialLog]) -> list[dict]:
    """Per (model, class) trial counts, successes, and mean cost over successful trials only."""
    groups: dict[tuple[str, str], list[TrialLog]] = {}
    for lg in logs:
        groups.setdefault((lg.model_tag, lg.class_name), []).append(lg)
    rows = []
    for (model_tag, cls), lgs in groups.items():
        ok = [lg.mean_cost for lg in lgs if lg.success]
        rows.append({
            "model": model_tag,
            "class": cls,
            "trials": len(lgs),
            "successes": len(ok),
            "mean_cost": float(np.mean(ok)) if ok else float("nan"),
        })
    return rows
