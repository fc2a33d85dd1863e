"""The switched Markov process: simulation, generator, carre du champ.

Two simulators are provided on purpose.  ``simulate`` uses thinning: a
dominating homogeneous Poisson stream of candidate events is laid along
the deterministic flow of the current mode, and candidates are accepted
with probability ``total_rate / rate_bound``.  ``simulate_hazard``
integrates the hazard along the flow and inverts it against a unit
exponential.  They are exact for the same law, so either serves as a
distributional oracle for the other.

``simulate_ensemble_states`` advances many replicates of the thinning
scheme in lockstep with numpy, for Monte Carlo work where per-trajectory
Python loops would dominate the budget.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .domain import CompactDomain
from .fields import VectorFieldSet
from .flow import FlowConfig, _rk4

__all__ = [
    "RateMatrixField",
    "SimConfig",
    "Trajectory",
    "RateBoundError",
    "simulate",
    "simulate_hazard",
    "simulate_ensemble_states",
    "generator_apply",
    "carre_du_champ",
]


class RateBoundError(RuntimeError):
    """Observed total rate exceeded the dominating bound."""


class RateValidationError(ValueError):
    """Negative entries or a reducible switching graph."""


@dataclass(frozen=True)
class RateMatrixField:
    """Switching intensities ``a_ij(x)``: zero diagonal, nonnegative off it.

    Entries are either a constant matrix or component-style callables of
    the position.  The positive-somewhere graph must be strongly connected
    (checked on a validation grid for state-dependent entries).
    """

    n_modes: int
    matrix: Optional[np.ndarray] = None
    entries: Optional[dict] = None  # (i, j) -> callable(x) for i != j
    kind: str = "constant"

    @staticmethod
    def from_matrix(A) -> "RateMatrixField":
        A = np.array(A, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n):
            raise RateValidationError("rate matrix must be square")
        if np.any(np.diag(A) != 0.0):
            raise RateValidationError("rate matrix must have zero diagonal")
        if np.any(A < 0.0):
            raise RateValidationError("rate matrix must have nonnegative off-diagonal entries")
        rm = RateMatrixField(n_modes=n, matrix=A, kind="constant")
        rm._check_irreducible(A > 0.0)
        return rm

    @staticmethod
    def from_functions(n_modes: int, entries: dict, validation_points=None) -> "RateMatrixField":
        for (i, j) in entries:
            if i == j:
                raise RateValidationError("diagonal entries are identically zero and cannot be set")
            if not (0 <= i < n_modes and 0 <= j < n_modes):
                raise RateValidationError(f"entry index {(i, j)} out of range")
        rm = RateMatrixField(n_modes=n_modes, entries=dict(entries), kind="state-dependent")
        if validation_points is not None:
            rm.validate_on(validation_points)
        return rm

    def _check_irreducible(self, adjacency: np.ndarray) -> None:
        if self.n_modes == 1:
            return
        n, _ = connected_components(adjacency.astype(float), directed=True, connection="strong")
        if n != 1:
            raise RateValidationError("switching graph is not strongly connected (reducible rates)")

    def validate_on(self, points) -> None:
        """Check nonnegativity and irreducibility over sample positions."""
        adjacency = np.zeros((self.n_modes, self.n_modes), dtype=bool)
        for x in np.asarray(points, dtype=float):
            R = self.rate_matrix(x)
            if np.any(R < 0.0):
                raise RateValidationError(f"negative switching rate at {x!r}")
            adjacency |= R > 0.0
        self._check_irreducible(adjacency)

    def rate(self, i: int, j: int, x) -> float:
        if self.kind == "constant":
            return float(self.matrix[i, j])
        fn = self.entries.get((i, j))
        if fn is None:
            return 0.0
        v = float(fn(np.asarray(x, dtype=float)))
        if v < 0.0:
            raise RateValidationError(f"negative switching rate a[{i},{j}] at {x!r}")
        return v

    def rate_matrix(self, x) -> np.ndarray:
        if self.kind == "constant":
            return self.matrix
        R = np.zeros((self.n_modes, self.n_modes))
        for (i, j), fn in self.entries.items():
            R[i, j] = float(fn(np.asarray(x, dtype=float)))
        return R

    def total_rate(self, i: int, x) -> float:
        """Exit intensity ``sum_{j != i} a_ij(x)`` of mode i at x."""
        if self.kind == "constant":
            return float(self.matrix[i].sum())
        return float(sum(self.rate(i, j, x) for j in range(self.n_modes) if j != i))

    def total_rate_batch(self, I: np.ndarray, X: np.ndarray) -> np.ndarray:
        out = np.zeros(len(I))
        for i in range(self.n_modes):
            m = I == i
            if not np.any(m):
                continue
            if self.kind == "constant":
                out[m] = self.matrix[i].sum()
            else:
                acc = np.zeros(int(m.sum()))
                for j in range(self.n_modes):
                    if j == i:
                        continue
                    fn = self.entries.get((i, j))
                    if fn is not None:
                        acc += np.broadcast_to(np.asarray(fn(X[m].T), dtype=float), acc.shape)
                out[m] = acc
        return out

    def row_probs(self, i: int, x) -> np.ndarray:
        """Jump-target distribution out of mode i at x."""
        row = np.array([self.rate(i, j, x) if j != i else 0.0 for j in range(self.n_modes)])
        tot = row.sum()
        if tot <= 0.0:
            raise RateBoundError(f"no positive exit rate from mode {i} at {x!r}")
        return row / tot

    def estimate_bound(self, dom: CompactDomain, safety: float = 1.2, per_axis: int = 32) -> float:
        """Upper bound for the total rate: grid maximum times a safety factor."""
        per_axis = max(2, min(per_axis, int(round(4096 ** (1.0 / dom.dimension)))))
        grid = dom.sample_grid(per_axis)
        worst = 0.0
        for x in grid:
            for i in range(self.n_modes):
                worst = max(worst, self.total_rate(i, x))
        return safety * worst


@dataclass(frozen=True)
class SimConfig:
    T_max: float
    dt_out: float = 0.1
    rate_bound: Optional[float] = None  # dominating intensity; estimated when absent
    flow: FlowConfig = field(default_factory=FlowConfig)
    seed: int = 0

    def __post_init__(self):
        if self.T_max <= 0 or self.dt_out <= 0:
            raise ValueError("T_max and dt_out must be positive")


@dataclass
class Trajectory:
    """One simulated path: jump bookkeeping plus a fixed-step sample train."""

    jump_times: np.ndarray
    modes: np.ndarray          # visited modes; modes[0] is the initial mode
    jump_states: np.ndarray    # exact positions at the jump times
    sample_times: np.ndarray
    sample_states: np.ndarray
    sample_modes: np.ndarray
    seed: int
    final_state: tuple         # (x, i) at T_max

    @property
    def holding_times(self) -> np.ndarray:
        t = np.concatenate([[0.0], self.jump_times])
        return np.diff(t)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        d = self.sample_states.shape[1]
        writer.writerow(["t"] + [f"x{k}" for k in range(d)] + ["mode"])
        for t, x, i in zip(self.sample_times, self.sample_states, self.sample_modes):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [int(i)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "jumps": int(len(self.jump_times)),
            "final_position": [float(v) for v in self.final_state[0]],
            "final_mode": int(self.final_state[1]),
            "seed": int(self.seed),
        }


def _resolve_bound(rm: RateMatrixField, dom: CompactDomain, cfg: SimConfig) -> float:
    if cfg.rate_bound is not None:
        return float(cfg.rate_bound)
    return rm.estimate_bound(dom)


def _check_start(dom: CompactDomain, x0: np.ndarray, i0: int, n_modes: int) -> None:
    if not 0 <= i0 < n_modes:
        raise ValueError(f"initial mode {i0} out of range")
    if dom.excursion(x0) > 1e-9 * max(1.0, dom.diameter()):
        raise ValueError(f"initial position {x0!r} lies outside the domain")


class _SampleRecorder:
    """Collects states on the dt_out grid as integration legs pass them."""

    def __init__(self, cfg: SimConfig, d: int):
        self.times = np.arange(0.0, cfg.T_max + 0.5 * cfg.dt_out, cfg.dt_out)
        self.states = np.empty((len(self.times), d))
        self.modes = np.empty(len(self.times), dtype=int)
        self.cursor = 0

    def record_until(self, t: float, x: np.ndarray, i: int) -> None:
        """Record all grid times <= t (call exactly when sitting at them)."""
        while self.cursor < len(self.times) and self.times[self.cursor] <= t + 1e-12:
            self.states[self.cursor] = x
            self.modes[self.cursor] = i
            self.cursor += 1

    def next_time(self) -> float:
        return self.times[self.cursor] if self.cursor < len(self.times) else math.inf


def simulate(fs: VectorFieldSet, rm: RateMatrixField, dom: CompactDomain, z0: tuple,
             cfg: SimConfig) -> Trajectory:
    """Thinning simulation of the switched process from ``z0 = (x0, i0)``."""
    x = np.asarray(z0[0], dtype=float).copy()
    i = int(z0[1])
    _check_start(dom, x, i, rm.n_modes)
    bound = _resolve_bound(rm, dom, cfg)
    rng = np.random.default_rng(cfg.seed)
    rec = _SampleRecorder(cfg, fs.dimension)
    fast = [fs.compiled(k) for k in range(fs.count)]
    jump_times, modes, jump_states = [], [i], []

    t = 0.0
    rec.record_until(t, x, i)
    next_candidate = t + (rng.exponential(1.0 / bound) if bound > 0 else math.inf)
    while t < cfg.T_max:
        t_stop = min(next_candidate, rec.next_time(), cfg.T_max)
        if t_stop > t:
            x = dom.wrap(_rk4(fast[i], x, t_stop - t, cfg.flow.h, cfg.flow.max_steps))
            t = t_stop
        rec.record_until(t, x, i)
        if t >= cfg.T_max:
            break
        if t == next_candidate:
            lam = rm.total_rate(i, x)
            if lam > bound * (1.0 + 1e-9):
                raise RateBoundError(
                    f"total rate {lam} exceeds bound {bound} at t={t}, x={x!r}, mode={i}")
            if lam > 0 and rng.random() < lam / bound:
                i = int(rng.choice(rm.n_modes, p=rm.row_probs(i, x)))
                jump_times.append(t)
                modes.append(i)
                jump_states.append(x.copy())
            next_candidate = t + rng.exponential(1.0 / bound)
    return Trajectory(
        jump_times=np.array(jump_times),
        modes=np.array(modes, dtype=int),
        jump_states=np.array(jump_states).reshape(len(jump_states), fs.dimension),
        sample_times=rec.times,
        sample_states=rec.states,
        sample_modes=rec.modes,
        seed=cfg.seed,
        final_state=(x, i),
    )


def simulate_hazard(fs: VectorFieldSet, rm: RateMatrixField, dom: CompactDomain, z0: tuple,
                    cfg: SimConfig) -> Trajectory:
    """Hazard-integration simulation: the oracle twin of :func:`simulate`.

    The next jump occurs when the integrated exit rate along the current
    flow first exceeds a unit exponential draw.  The hazard rides along
    the state in an augmented fixed-step integration; the crossing inside
    the final step is located by cubic Hermite interpolation, then the
    state is advanced exactly to the crossing time.
    """
    x = np.asarray(z0[0], dtype=float).copy()
    i = int(z0[1])
    _check_start(dom, x, i, rm.n_modes)
    rng = np.random.default_rng(cfg.seed)
    rec = _SampleRecorder(cfg, fs.dimension)
    fast = [fs.compiled(k) for k in range(fs.count)]
    jump_times, modes, jump_states = [], [i], []

    t = 0.0
    rec.record_until(t, x, i)
    target = rng.exponential(1.0)
    hazard = 0.0
    h = cfg.flow.h
    while t < cfg.T_max:
        t_stop = min(rec.next_time(), cfg.T_max)
        # advance toward t_stop in fixed steps, watching the hazard level
        crossed = False
        while t < t_stop - 1e-15:
            dt = min(h, t_stop - t)
            lam0 = rm.total_rate(i, x)
            x_new = _rk4(fast[i], x, dt, cfg.flow.h, cfg.flow.max_steps)
            lam1 = rm.total_rate(i, x_new)
            dH = 0.5 * dt * (lam0 + lam1)
            if hazard + dH >= target and dH > 0:
                # cubic Hermite root for H(tau) = target on [0, dt]
                tau = _hermite_crossing(hazard, lam0, lam1, dH, dt, target)
                x = _rk4(fast[i], x, tau, cfg.flow.h, cfg.flow.max_steps)
                t += tau
                crossed = True
                break
            hazard += dH
            x = x_new
            t += dt
        if crossed:
            x = dom.wrap(x)
            i = int(rng.choice(rm.n_modes, p=rm.row_probs(i, x)))
            jump_times.append(t)
            modes.append(i)
            jump_states.append(x.copy())
            target = rng.exponential(1.0)
            hazard = 0.0
            continue
        x = dom.wrap(x)
        t = t_stop
        rec.record_until(t, x, i)
        if t >= cfg.T_max:
            break
    return Trajectory(
        jump_times=np.array(jump_times),
        modes=np.array(modes, dtype=int),
        jump_states=np.array(jump_states).reshape(len(jump_states), fs.dimension),
        sample_times=rec.times,
        sample_states=rec.states,
        sample_modes=rec.modes,
        seed=cfg.seed,
        final_state=(x, i),
    )


def _hermite_crossing(H0: float, lam0: float, lam1: float, dH: float, dt: float,
                      target: float) -> float:
    """Time within a step at which the cumulative hazard reaches target.

    H is modeled on [0, dt] by the cubic with H(0)=H0, H(dt)=H0+dH and
    slopes lam0, lam1; monotone since both slopes are nonnegative.
    Bisection is plenty here (the step is already small).
    """
    want = target - H0
    lo, hi = 0.0, dt

    def H(tau):
        u = tau / dt
        h00 = 2 * u**3 - 3 * u**2 + 1
        h10 = u**3 - 2 * u**2 + u
        h01 = -2 * u**3 + 3 * u**2
        h11 = u**3 - u**2
        # Hermite basis on values {0, dH} and scaled slopes
        return h00 * 0.0 + h10 * dt * lam0 + h01 * dH + h11 * dt * lam1

    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if H(mid) < want:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def simulate_ensemble_states(fs: VectorFieldSet, rm: RateMatrixField, dom: CompactDomain,
                             z0: tuple, times: Sequence[float], n_replicates: int,
                             seed: int, cfg: Optional[SimConfig] = None,
                             h_max: float = 0.02) -> tuple[np.ndarray, np.ndarray]:
    """States of many thinning replicates at the requested times.

    Returns ``(X, I)`` with shapes (n_times, n, d) and (n_times, n).  All
    replicates share one seeded generator; draws happen in a fixed
    iteration order, so the output is reproducible bit for bit.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("times must be strictly increasing and positive")
    cfg = cfg or SimConfig(T_max=float(times[-1]), dt_out=float(times[-1]))
    bound = _resolve_bound(rm, dom, cfg)
    rng = np.random.default_rng(seed)
    n = int(n_replicates)
    d = fs.dimension

    X = np.tile(np.asarray(z0[0], dtype=float), (n, 1))
    I = np.full(n, int(z0[1]), dtype=int)
    t = np.zeros(n)
    cand = rng.exponential(1.0 / bound, size=n) if bound > 0 else np.full(n, np.inf)

    out_X = np.empty((len(times), n, d))
    out_I = np.empty((len(times), n), dtype=int)

    def field_batch(P, M):
        out = np.empty_like(P)
        for i in range(rm.n_modes):
            mask = M == i
            if np.any(mask):
                out[mask] = fs.eval_batch(i, P[mask])
        return out

    for k_out, T_out in enumerate(times):
        while True:
            rem = T_out - t
            active = rem > 1e-15
            if not np.any(active):
                break
            dt = np.minimum(h_max, np.minimum(rem, cand - t))
            dt = np.where(active, np.maximum(dt, 0.0), 0.0)
            idx = dt > 0.0
            if np.any(idx):
                P = X[idx]
                M = I[idx]
                step = dt[idx][:, None]
                k1 = field_batch(P, M)
                k2 = field_batch(P + 0.5 * step * k1, M)
                k3 = field_batch(P + 0.5 * step * k2, M)
                k4 = field_batch(P + step * k3, M)
                X[idx] = P + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                t[idx] += dt[idx]
            at_cand = active & (cand - t <= 1e-12)
            if np.any(at_cand):
                sub = np.where(at_cand)[0]
                Xs = X[sub]
                if dom.kind == "torus":
                    Xs = np.mod(Xs, 1.0)
                    X[sub] = Xs
                lam = rm.total_rate_batch(I[sub], Xs)
                if np.any(lam > bound * (1.0 + 1e-9)):
                    raise RateBoundError("total rate exceeded the dominating bound in ensemble run")
                accept = rng.random(len(sub)) < lam / bound
                acc = sub[accept]
                if len(acc):
                    if rm.n_modes == 2:
                        I[acc] = 1 - I[acc]
                    else:
                        u = rng.random(len(acc))
                        for r, upos in zip(acc, u):
                            probs = rm.row_probs(I[r], X[r])
                            I[r] = int(np.searchsorted(np.cumsum(probs), upos))
                cand[sub] = t[sub] + rng.exponential(1.0 / bound, size=len(sub))
        snap = X.copy()
        if dom.kind == "torus":
            snap = np.mod(snap, 1.0)
        out_X[k_out] = snap
        out_I[k_out] = I
    return out_X, out_I


# generator and carre du champ -------------------------------------------


def _gradient(g: Callable, x: np.ndarray, i: int, h: float) -> np.ndarray:
    grad = np.empty(len(x))
    for b in range(len(x)):
        e = np.zeros(len(x))
        e[b] = h
        grad[b] = (g(x + e, i) - g(x - e, i)) / (2.0 * h)
    return grad


def generator_apply(fs: VectorFieldSet, rm: RateMatrixField, g: Callable, x, i: int,
                    grad: Optional[Callable] = None, h: float = 1e-6) -> float:
    """Generator value: drift term plus rate-weighted mode increments.

    ``g(x, i)`` must be smooth in x; its spatial gradient is taken from
    the ``grad`` oracle when supplied and central differences otherwise.
    """
    x = np.asarray(x, dtype=float)
    gx = grad(x, i) if grad is not None else _gradient(g, x, i, h * (1.0 + np.linalg.norm(x)))
    drift = float(fs.eval(i, x) @ np.asarray(gx, dtype=float))
    gi = g(x, i)
    jump = sum(rm.rate(i, j, x) * (g(x, j) - gi) for j in range(rm.n_modes) if j != i)
    return drift + float(jump)


def carre_du_champ(rm: RateMatrixField, f: Callable, x, i: int,
                   check_identity: bool = False, fs: Optional[VectorFieldSet] = None) -> float:
    """Rate-weighted squared mode increments of f.

    With ``check_identity=True`` (mode-only f, ``fs`` required) the value
    is cross-checked against ``L(f^2) - 2 f L(f)``, whose drift terms
    cancel exactly for functions constant in x.
    """
    x = np.asarray(x, dtype=float)
    fi = f(x, i)
    gamma = float(sum(rm.rate(i, j, x) * (f(x, j) - fi) ** 2
                      for j in range(rm.n_modes) if j != i))
    if check_identity:
        if fs is None:
            raise ValueError("check_identity requires the field set")
        f2 = lambda y, k: f(y, k) ** 2
        other = generator_apply(fs, rm, f2, x, i) - 2.0 * fi * generator_apply(fs, rm, f, x, i)
        if abs(gamma - other) > 1e-10 * (1.0 + abs(gamma)):
            raise AssertionError(f"carre du champ identity violated: {gamma} vs {other}")
    return gamma
