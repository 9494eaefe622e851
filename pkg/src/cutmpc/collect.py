"""Trajectory-tracking data collection on the synthetic plant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import Gains, damping_control, make_sawing_trajectory, reference_force
from .data import Trial
from .sim import DT, ObjectClass, PlantState, is_success, step_plant


@dataclass(frozen=True)
class TrackingPlan:
    K_p: float
    saw_amplitude: float
    saw_rate: float
    descent_speed: float
    clearance: float = 0.02
    K_a: float = 0.003


# Three tiers per class: tuned for the object, tuned for "a class like it", one size for all.
GENERIC = TrackingPlan(K_p=1.0, saw_amplitude=0.008, saw_rate=0.5, descent_speed=0.008)


def tuned_plan(obj: ObjectClass) -> TrackingPlan:
    """Class-appropriate parameters: stiffer material gets wider, faster sawing and slower descent."""
    hardness = np.clip(np.log(obj.k0 / 300.0) / np.log(12.0), 0.0, 1.0)
    return TrackingPlan(
        K_p=1.5,
        saw_amplitude=0.004 + 0.010 * hardness,
        saw_rate=0.4 + 0.6 * hardness,
        descent_speed=0.014 - 0.008 * hardness,
    )


def tier_plan(obj: ObjectClass, tier: int, rng: np.random.Generator) -> TrackingPlan:
    """Sample a tracking plan for one trial; tier 0 = object-optimal, 1 = class, 2 = generic."""
    base = tuned_plan(obj) if tier < 2 else GENERIC
    spread = (0.05, 0.25, 0.15)[tier]
    j = 1.0 + spread * rng.uniform(-1.0, 1.0, size=4)
    kp = (1.5, 1.0, 0.6)[tier]
    return TrackingPlan(
        K_p=kp * j[0],
        saw_amplitude=base.saw_amplitude * j[1],
        saw_rate=base.saw_rate * j[2],
        descent_speed=base.descent_speed * j[3],
        clearance=float(rng.uniform(0.01, 0.03)),
    )


def run_tracking_trial(
    obj: ObjectClass,
    plan: TrackingPlan,
    seed: int,
    max_duration: float = 30.0,
    fr_limit: tuple[float, float, float] = (20.0, 20.0, 30.0),
    settle: float = 0.25,
) -> tuple[Trial, bool]:
    """Track a descending sawing trajectory from above the object until the board is reached.

    The reference force is saturated at ``fr_limit`` per axis. Returns the trial and
    whether the knife reached the board.
    """
    rng = np.random.default_rng(seed)
    gains = Gains(np.full(3, plan.K_a), np.array([1.0, plan.K_p, plan.K_p]))
    state = PlantState.above(obj, y=0.0, clearance=plan.clearance)
    depth = plan.clearance + obj.height + 0.02
    traj = make_sawing_trajectory(state.p, plan.saw_amplitude, plan.saw_rate, plan.descent_speed, depth / plan.descent_speed)
    lim = np.asarray(fr_limit, dtype=float)

    n_max = int(round(max_duration / DT))
    n_settle = int(round(settle / DT))
    ts, ps, fss, frs = [], [], [], []
    f_s = obj.noise_sigma * rng.normal(size=3) if obj.noise_sigma > 0 else np.zeros(3)
    done_at = None
    for k in range(n_max):
        p_d, pdot_d = traj.at(k)
        f_r = np.clip(reference_force(state.p - p_d, pdot_d, gains.K_a, gains.K_p), -lim, lim)
        ts.append(k * DT)
        ps.append(state.p)
        fss.append(f_s)
        frs.append(f_r)
        u = damping_control(f_s, f_r, gains.K_a)
        state, f_s = step_plant(state, u, obj, DT, rng)
        if done_at is None and is_success(state, obj):
            done_at = k
        if done_at is not None and k - done_at >= n_settle:
            break
    trial = Trial(
        np.array(ts),
        np.array(ps),
        np.array(fss),
        np.array(frs),
        obj.name,
        K_a=gains.K_a,
        K_p=gains.K_p,
        meta={"seed": seed, "success": int(done_at is not None)},
    )
    return trial, done_at is not None


@dataclass(frozen=True)
class CollectionPlan:
    train_per_class: int = 10
    val_per_class: int = 4
    test_per_class: int = 3
    max_duration: float = 30.0
    fr_limit: tuple[float, float, float] = (20.0, 20.0, 30.0)


@dataclass
class Record:
    trial: Trial
    split: str
    seen: bool
    tier: int


def collect_dataset(classes: list[ObjectClass], plan: CollectionPlan, seed: int) -> list[Record]:
    """Tracking trials for every class: train/val/test splits for seen classes, test only for unseen.

    Each trial draws its tier (cycled), tracking parameters and plant noise from its own
    seed, derived from ``seed`` and the (class, split, index) triple.
    """
    out = []
    splits = (("train", plan.train_per_class), ("val", plan.val_per_class), ("test", plan.test_per_class))
    for ci, obj in enumerate(classes):
        for si, (split, n) in enumerate(splits):
            if not obj.seen and split != "test":
                continue
            for i in range(n):
                ss = np.random.SeedSequence([seed, ci, si, i])
                trial_seed = int(ss.generate_state(1)[0])
                rng = np.random.default_rng(ss.spawn(1)[0])
                tier = i % 3
                tp = tier_plan(obj, tier, rng)
                trial, _ = run_tracking_trial(obj, tp, trial_seed, plan.max_duration, plan.fr_limit)
                if not np.all(np.isfinite(trial.p)) or not np.all(np.isfinite(trial.f_s)):
                    raise RuntimeError(f"simulation diverged for {obj.name} {split} {i}")
                trial.meta["tier"] = tier
                trial.meta["split"] = split
                out.append(Record(trial, split, obj.seen, tier))
    return out
