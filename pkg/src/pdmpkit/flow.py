"""Numerical flows of single fields and composite (switched) flows.

Fixed-step RK4 is the default for anything feeding a rank computation:
its output depends smoothly on durations because there is no step
acceptance logic.  An embedded Dormand-Prince 5(4) pair is available for
long ergodic runs where speed matters more than exact smoothness.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .domain import CompactDomain
from .fields import VectorFieldSet

__all__ = [
    "FlowConfig",
    "SwitchSchedule",
    "TimeSimplex",
    "FlowError",
    "flow",
    "composite",
    "duration_jacobian",
    "invariance_check",
    "InvarianceReport",
]


class FlowError(RuntimeError):
    """Integration failure: step budget exceeded or domain escape."""


@dataclass(frozen=True)
class FlowConfig:
    method: str = "rk4"  # "rk4" fixed step | "rk45" adaptive
    h: float = 1e-3
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_steps: int = 5_000_000

    def __post_init__(self):
        if self.h <= 0 or self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("step size and tolerances must be positive")
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"unknown integration method {self.method!r}")


@dataclass(frozen=True)
class SwitchSchedule:
    """Field indices and leg durations of a composite flow.

    Legs are applied in order: index[0] first, matching the composition
    order of switched trajectories.
    """

    indices: tuple
    durations: tuple

    def __post_init__(self):
        if len(self.indices) != len(self.durations):
            raise ValueError("indices and durations must have equal length")
        if any(u < 0 for u in self.durations):
            raise ValueError("durations must be nonnegative")

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def total_time(self) -> float:
        return float(sum(self.durations))

    @staticmethod
    def make(indices: Sequence[int], durations: Sequence[float]) -> "SwitchSchedule":
        return SwitchSchedule(tuple(int(i) for i in indices), tuple(float(u) for u in durations))

    def to_json(self) -> list:
        return [[int(i), float(u)] for i, u in zip(self.indices, self.durations)]

    @staticmethod
    def from_json(obj) -> "SwitchSchedule":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return SwitchSchedule.make([p[0] for p in obj], [p[1] for p in obj])


@dataclass(frozen=True)
class TimeSimplex:
    """Duration vectors v >= 0 with v_1 + ... + v_m <= s."""

    m: int
    s: float

    def contains(self, v, tol: float = 1e-12) -> bool:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.m,):
            return False
        return bool(np.all(v >= -tol) and v.sum() <= self.s + tol)


# integrators -----------------------------------------------------------


def _rk4(f, x: np.ndarray, t: float, h: float, max_steps: int) -> np.ndarray:
    n = max(1, math.ceil(t / h))
    if n > max_steps:
        raise FlowError(f"step count {n} exceeds max_steps {max_steps}")
    dt = t / n
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


# Dormand-Prince 5(4) coefficients
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _rk45(f, x: np.ndarray, t: float, cfg: FlowConfig) -> np.ndarray:
    remaining = t
    h = min(cfg.h, t) if t > 0 else 0.0
    steps = 0
    while remaining > 1e-14 * max(1.0, t):
        h = min(h, remaining)
        k = [f(x)]
        for s in range(1, 7):
            xi = x + h * sum(a * ks for a, ks in zip(_DP_A[s], k))
            k.append(f(xi))
        x5 = x + h * sum(b * ks for b, ks in zip(_DP_B5, k))
        x4 = x + h * sum(b * ks for b, ks in zip(_DP_B4, k))
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(x), np.abs(x5))
        err = float(np.sqrt(np.mean(((x5 - x4) / scale) ** 2)))
        if err <= 1.0:
            x = x5
            remaining -= h
        factor = 0.9 * (1.0 / err) ** 0.2 if err > 0 else 5.0
        h *= min(5.0, max(0.2, factor))
        steps += 1
        if steps > cfg.max_steps:
            raise FlowError(f"adaptive stepper exceeded max_steps {cfg.max_steps}")
    return x


# public operations ------------------------------------------------------


def flow(fs: VectorFieldSet, i: int, t: float, x, cfg: Optional[FlowConfig] = None,
         dom: Optional[CompactDomain] = None, escape_slack: Optional[float] = None) -> np.ndarray:
    """Numerical flow point ``phi^i_t(x)``.

    When a domain is supplied, torus results are wrapped and the endpoint
    is checked against the domain with slack ``1e-6 * diameter`` (or an
    explicit ``escape_slack``); a breach signals a modeling error rather
    than an integration detail.
    """
    if t < 0:
        raise ValueError("flow time must be nonnegative")
    cfg = cfg or FlowConfig()
    x = np.asarray(x, dtype=float).copy()
    if t > 0:
        f = lambda y: fs.eval(i, y)
        x = _rk4(f, x, t, cfg.h, cfg.max_steps) if cfg.method == "rk4" else _rk45(f, x, t, cfg)
    if dom is not None:
        x = dom.wrap(x)
        slack = escape_slack if escape_slack is not None else 1e-6 * dom.diameter()
        exc = dom.excursion(x)
        if exc > slack:
            raise FlowError(f"trajectory escaped the domain by {exc:.3e} (slack {slack:.3e})")
    return x


def composite(fs: VectorFieldSet, sched: SwitchSchedule, x, cfg: Optional[FlowConfig] = None,
              dom: Optional[CompactDomain] = None) -> np.ndarray:
    """Composite flow: legs applied in schedule order (first leg first)."""
    x = np.asarray(x, dtype=float).copy()
    for i, u in zip(sched.indices, sched.durations):
        x = flow(fs, i, u, x, cfg, dom)
    return x


def duration_jacobian(fs: VectorFieldSet, sched: SwitchSchedule, terminal_index: int, s: float,
                      x, cfg: Optional[FlowConfig] = None, h_dur: Optional[float] = None) -> np.ndarray:
    """Jacobian of the fixed-horizon endpoint map in its leg durations.

    The map is ``Psi(v, t) = phi^terminal_{s - sum(v) - t} ( Phi_v(x) )``
    with an extra slack coordinate t, evaluated at the schedule's own
    durations and t = 0.  Columns are ordered (v_1, ..., v_m, t) and use
    central differences, falling back to one-sided quotients where a
    perturbation would leave the time simplex.
    """
    cfg = cfg or FlowConfig()
    m = len(sched)
    u = np.asarray(sched.durations, dtype=float)
    total = u.sum()
    if total >= s:
        raise ValueError(f"schedule durations sum to {total}, need < s = {s}")
    h = h_dur if h_dur is not None else 1e-5 * (1.0 + s)
    x = np.asarray(x, dtype=float)

    def endpoint(v: np.ndarray, t: float) -> np.ndarray:
        tail = s - v.sum() - t
        y = composite(fs, SwitchSchedule(sched.indices, tuple(v)), x, cfg)
        return flow(fs, terminal_index, tail, y, cfg)

    slack_budget = s - total  # room left for the terminal leg
    cols = []
    for k in range(m + 1):
        def shifted(delta: float) -> np.ndarray:
            v = u.copy()
            t = 0.0
            if k < m:
                v[k] += delta
            else:
                t = delta
            return endpoint(v, t)

        lo_ok = (u[k] - h >= 0.0) if k < m else False  # t = 0 is the lower edge
        hi_ok = h <= slack_budget - 1e-12
        if lo_ok and hi_ok:
            col = (shifted(+h) - shifted(-h)) / (2.0 * h)
        elif hi_ok:
            col = (shifted(+h) - endpoint(u, 0.0)) / h
        elif lo_ok:
            col = (endpoint(u, 0.0) - shifted(-h)) / h
        else:
            raise ValueError("no admissible perturbation inside the time simplex")
        cols.append(col)
    return np.stack(cols, axis=-1)


@dataclass
class InvarianceReport:
    passed: bool
    max_excursion: float
    slack: float
    worst: Optional[dict] = None  # field index, start point, excursion

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "max_excursion": self.max_excursion,
            "slack": self.slack,
            "worst": self.worst,
        }


def invariance_check(dom: CompactDomain, fs: VectorFieldSet, horizon: float, grid_res,
                     cfg: Optional[FlowConfig] = None, checkpoints: int = 16) -> InvarianceReport:
    """Integrate every field from every grid point and record the largest
    outward excursion; passes when it stays within integration slack."""
    cfg = cfg or FlowConfig()
    slack = 1e-6 * dom.diameter()
    grid = dom.sample_grid(grid_res)
    worst = None
    max_exc = 0.0
    dt = horizon / checkpoints
    for i in range(fs.count):
        for p in grid:
            x = p.copy()
            for _ in range(checkpoints):
                x = _rk4(lambda y: fs.eval(i, y), x, dt, cfg.h, cfg.max_steps)
                exc = dom.excursion(dom.wrap(x))
                if exc > max_exc:
                    max_exc = exc
                    worst = {"field": i, "start": [float(v) for v in p], "excursion": exc}
    return InvarianceReport(passed=max_exc <= slack, max_excursion=max_exc, slack=slack, worst=worst)
