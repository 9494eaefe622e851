"""Synthetic cutting plant: a velocity-commanded knife in a parametric material.

The material resists penetration with a depth-graded spring whose force is
weakened by lateral (sawing) speed, and holds the knife laterally with
Coulomb stick-slip friction. The cut front only moves downwards.
"""

from __future__ import annotations

import configparser
from dataclasses import MISSING, dataclass, fields, replace
from pathlib import Path

import numpy as np

DT = 1.0 / 200.0
TABLE_STIFFNESS = 2.0e4  # N/m, cutting board reaction below table_z


@dataclass(frozen=True)
class ObjectClass:
    name: str
    surface_z: float
    table_z: float
    k0: float
    k_grad: float
    mu_static: float
    mu_kinetic: float
    alpha_saw: float
    stick_vel_eps: float
    noise_sigma: float
    seen: bool
    cut_base_rate: float = 1.0  # 1/s
    cut_saw_gain: float = 20.0  # 1/m
    fracture_depth: float = 1e-3  # m of elastic indentation before material fails
    k_tangential: float = 2000.0  # N/m lateral contact stiffness while stuck

    def __post_init__(self):
        if not self.surface_z > self.table_z:
            raise ValueError(f"{self.name}: surface_z must lie above table_z")
        if not self.k0 > 0:
            raise ValueError(f"{self.name}: k0 must be positive")
        if not self.mu_static >= self.mu_kinetic >= 0:
            raise ValueError(f"{self.name}: need mu_static >= mu_kinetic >= 0")
        if self.alpha_saw < 0 or self.noise_sigma < 0 or self.k_grad < 0:
            raise ValueError(f"{self.name}: alpha_saw, k_grad and noise_sigma must be >= 0")
        if self.stick_vel_eps < 0 or self.fracture_depth < 0:
            raise ValueError(f"{self.name}: stick_vel_eps and fracture_depth must be >= 0")
        if self.cut_base_rate < 0 or self.cut_saw_gain < 0 or self.k_tangential <= 0:
            raise ValueError(f"{self.name}: invalid cut-rate constants")

    @property
    def height(self) -> float:
        return self.surface_z - self.table_z


@dataclass(frozen=True)
class PlantState:
    p: np.ndarray
    cut_front_z: float
    sticking: bool = False
    t: float = 0.0
    preload_y: float = 0.0  # commanded-but-unrealised lateral travel while stuck

    @classmethod
    def above(cls, obj: ObjectClass, y: float = 0.0, clearance: float = 0.02) -> "PlantState":
        return cls(p=np.array([0.0, y, obj.surface_z + clearance]), cut_front_z=obj.surface_z)


@dataclass(frozen=True)
class StateSample:
    t: float
    p: np.ndarray
    f_s: np.ndarray
    f_r: np.ndarray


def normal_force(obj: ObjectClass, cut_front_z: float, pz: float, v_y: float) -> float:
    """Vertical resistance of the material for a knife at height ``pz``."""
    penetration = max(0.0, cut_front_z - pz)
    if penetration == 0.0:
        return 0.0
    depth = obj.surface_z - cut_front_z
    stiffness = obj.k0 + obj.k_grad * depth
    return stiffness * penetration / (1.0 + obj.alpha_saw * abs(v_y))


def step_plant(
    state: PlantState,
    u: np.ndarray,
    obj: ObjectClass,
    dt: float = DT,
    rng: np.random.Generator | None = None,
) -> tuple[PlantState, np.ndarray]:
    """Advance the plant by one tick under velocity command ``u``.

    Returns the new state and the measured force. The X axis does not touch the
    material; it integrates its (set-point) command freely.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (3,) or not np.all(np.isfinite(u)):
        raise ValueError(f"velocity command must be a finite 3-vector, got {u!r}")
    if not dt > 0:
        raise ValueError("dt must be positive")

    p = state.p
    cf = state.cut_front_z
    in_contact = cf - p[2] > 0.0

    sticking = state.sticking
    preload = state.preload_y
    if in_contact:
        n_static = normal_force(obj, cf, p[2], 0.0)
        if sticking:
            preload = preload + u[1] * dt
            if obj.k_tangential * abs(preload) > obj.mu_static * n_static:
                sticking, preload, v_y = False, 0.0, u[1]
            else:
                v_y = 0.0
        elif abs(u[1]) < obj.stick_vel_eps:
            sticking, preload, v_y = True, 0.0, 0.0
        else:
            v_y = u[1]
    else:
        sticking, preload, v_y = False, 0.0, u[1]

    pz = p[2] + u[2] * dt
    py = p[1] + v_y * dt

    penetration = cf - pz
    if penetration > obj.fracture_depth:
        rate = obj.cut_base_rate + obj.cut_saw_gain * abs(v_y)
        advance = rate * (penetration - obj.fracture_depth) * dt
        cf = max(obj.table_z, cf - advance, pz + obj.fracture_depth)
        cf = min(cf, state.cut_front_z)

    n = normal_force(obj, cf, pz, v_y)
    f = np.zeros(3)
    if n > 0.0:
        f[2] = n
        if sticking:
            f[1] = -obj.k_tangential * preload
        elif v_y != 0.0:
            f[1] = -np.sign(v_y) * obj.mu_kinetic * n
    else:
        sticking, preload = False, 0.0
    if pz < obj.table_z:
        f[2] += TABLE_STIFFNESS * (obj.table_z - pz)
    if obj.noise_sigma > 0.0:
        if rng is None:
            raise ValueError("a random stream is required when noise_sigma > 0")
        f = f + rng.normal(0.0, obj.noise_sigma, size=3)

    new = PlantState(
        p=np.array([p[0] + u[0] * dt, py, pz]),
        cut_front_z=cf,
        sticking=sticking,
        t=state.t + dt,
        preload_y=preload,
    )
    return new, f


def is_success(state: PlantState, obj: ObjectClass, tol: float = 2e-3) -> bool:
    if not tol > 0:
        raise ValueError("tol must be positive")
    return bool(state.p[2] <= obj.table_z + tol)


# name: k0, k_grad, mu_s, mu_k, alpha_saw, cut_base_rate, cut_saw_gain, fracture_depth, height
_LIBRARY = {
    "foam":     (300.0,  1000.0, 0.30, 0.20, 5.0,  1.50, 20.0,  1.0e-3, 0.050, True),
    "gel":      (600.0,  3000.0, 0.35, 0.25, 8.0,  1.20, 30.0,  1.0e-3, 0.045, True),
    "fibrous":  (1200.0, 8000.0, 0.45, 0.30, 15.0, 0.80, 60.0,  1.5e-3, 0.040, True),
    "waxy":     (1800.0, 6000.0, 0.50, 0.35, 20.0, 0.60, 80.0,  1.5e-3, 0.045, True),
    "rind":     (2500.0, 4000.0, 0.55, 0.40, 30.0, 0.50, 100.0, 2.0e-3, 0.050, True),
    "dense":    (3500.0, 2.0e4,  0.60, 0.45, 40.0, 0.40, 120.0, 2.0e-3, 0.040, True),
    # unseen: tacky sits mid-hull in stiffness but has friction above every seen class,
    # hard is stiffer than any seen class, brittle has an out-of-range saw response.
    "tacky":    (900.0,  5000.0, 0.80, 0.65, 10.0, 1.00, 40.0,  1.0e-3, 0.045, False),
    "hard":     (4500.0, 2.5e4,  0.50, 0.40, 35.0, 0.35, 110.0, 2.5e-3, 0.040, False),
    "brittle":  (2000.0, 5000.0, 0.40, 0.30, 60.0, 0.70, 160.0, 1.0e-3, 0.045, False),
}


def make_class_library(seed: int = 0, jitter: float = 0.03) -> list[ObjectClass]:
    """Nine synthetic material classes, six seen and three unseen.

    Each physical constant is scaled by a seeded factor in [1-jitter, 1+jitter].
    """
    rng = np.random.default_rng(seed)
    out = []
    for name, (k0, kg, mus, muk, alpha, base, saw, frac, height, seen) in _LIBRARY.items():
        s = 1.0 + jitter * rng.uniform(-1.0, 1.0, size=8)
        mu_s, mu_k = mus * s[2], muk * s[3]
        out.append(
            ObjectClass(
                name=name,
                surface_z=height,
                table_z=0.0,
                k0=k0 * s[0],
                k_grad=kg * s[1],
                mu_static=max(mu_s, mu_k),
                mu_kinetic=mu_k,
                alpha_saw=alpha * s[4],
                stick_vel_eps=1e-3,
                noise_sigma=0.05,
                seen=seen,
                cut_base_rate=base * s[5],
                cut_saw_gain=saw * s[6],
                fracture_depth=frac * s[7],
            )
        )
    return out


def _fmt(v) -> str:
    return str(v) if isinstance(v, bool) else repr(float(v))


def save_class_library(classes: list[ObjectClass], path: str | Path) -> None:
    cp = configparser.ConfigParser()
    for c in classes:
        cp[c.name] = {f.name: _fmt(getattr(c, f.name)) for f in fields(c) if f.name != "name"}
    with open(path, "w") as fh:
        cp.write(fh)


def load_class_library(path: str | Path) -> list[ObjectClass]:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    out = []
    for name in cp.sections():
        sec = cp[name]
        kw = {}
        for f in fields(ObjectClass):
            if f.name == "name":
                continue
            if f.name not in sec:
                if f.default is not MISSING:
                    continue
                raise ValueError(f"class {name!r} is missing {f.name!r}")
            raw = sec[f.name]
            kw[f.name] = sec.getboolean(f.name) if f.name == "seen" else float(raw)
        out.append(ObjectClass(name=name, **kw))
    return out


def with_noise(obj: ObjectClass, sigma: float) -> ObjectClass:
    return replace(obj, noise_sigma=sigma)
