"""Velocity-resolved damping control and sawing reference trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sim import DT


@dataclass(frozen=True)
class Gains:
    """Diagonal compliance (K_a) and stiffness (K_p) gains, stored as 3-vectors."""

    K_a: np.ndarray
    K_p: np.ndarray

    def __post_init__(self):
        for name in ("K_a", "K_p"):
            g = np.asarray(getattr(self, name), dtype=float)
            if g.ndim == 2:
                if np.any(g != np.diag(np.diag(g))):
                    raise ValueError(f"{name} must be diagonal")
                g = np.diag(g).copy()
            if g.shape != (3,) or not np.all(np.isfinite(g)) or np.any(g <= 0):
                raise ValueError(f"{name} needs strictly positive diagonal entries, got {g}")
            object.__setattr__(self, name, g)

    @classmethod
    def isotropic(cls, k_a: float = 0.003, k_p: float = 1.0) -> "Gains":
        return cls(np.full(3, k_a), np.full(3, k_p))


def _finite3(name, v):
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (3,) or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite 3-vector(s)")
    return v


def damping_control(f_s, f_r, K_a) -> np.ndarray:
    """Commanded velocity u = K_a (f_s - f_r)."""
    f_s = _finite3("f_s", f_s)
    f_r = _finite3("f_r", f_r)
    return _diag(K_a) * (f_s - f_r)


def reference_force(e, pdot_d, K_a, K_p) -> np.ndarray:
    """Reference force K_a^-1 (K_p e - pdot_d) realising the compliant tracking law."""
    e = _finite3("e", e)
    pdot_d = _finite3("pdot_d", pdot_d)
    return (_diag(K_p) * e - pdot_d) / _diag(K_a)


def _diag(K):
    K = np.asarray(K, dtype=float)
    return np.diag(K) if K.ndim == 2 else K


@dataclass(frozen=True)
class DesiredTrajectory:
    t: np.ndarray
    p_d: np.ndarray
    pdot_d: np.ndarray
    saw_amplitude: float
    saw_rate: float
    descent_speed: float

    def __len__(self):
        return len(self.t)

    def at(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Desired (position, velocity) at tick k; held at the final point beyond the end."""
        if k >= len(self.t):
            return self.p_d[-1], np.zeros(3)
        return self.p_d[k], self.pdot_d[k]


def make_sawing_trajectory(
    start,
    saw_amplitude: float,
    saw_rate: float,
    descent_speed: float,
    duration: float,
    dt: float = DT,
) -> DesiredTrajectory:
    if not duration > 0:
        raise ValueError("duration must be positive")
    start = np.asarray(start, dtype=float)
    n = int(round(duration / dt)) + 1
    t = np.arange(n) * dt
    w = 2.0 * np.pi * saw_rate
    p_d = np.empty((n, 3))
    p_d[:, 0] = start[0]
    p_d[:, 1] = start[1] + saw_amplitude * np.sin(w * t)
    p_d[:, 2] = start[2] - descent_speed * t
    pdot_d = np.empty((n, 3))
    pdot_d[:, 0] = 0.0
    pdot_d[:, 1] = saw_amplitude * w * np.cos(w * t)
    pdot_d[:, 2] = -descent_speed
    return DesiredTrajectory(t, p_d, pdot_d, saw_amplitude, saw_rate, descent_speed)
