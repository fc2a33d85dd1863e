"""Empirical ergodicity diagnostics.

Occupation histograms, total-variation decay between two start states,
generator-based stationarity residuals, invasion rates of the boundary
processes of the competition model, and boundary-occupation fractions.

Histogram TV between finite ensembles is biased upward, so the decay fit
is gated twice: by the global Monte Carlo floor ``2/sqrt(replicates)``
and by a same-law floor measured from half-ensemble pairs at each time
(which tracks the bin-count-dependent plateau the global floor misses).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .domain import CompactDomain
from .fields import VectorFieldSet
from .flow import FlowConfig
from .pdmp import (RateMatrixField, SimConfig, Trajectory, generator_apply,
                   simulate, simulate_ensemble_states)

__all__ = [
    "EmpiricalMeasure",
    "TVDecayReport",
    "empirical_measure",
    "tv_distance",
    "tv_decay",
    "stationarity_residual",
    "StationarityResult",
    "invasion_rate_y",
    "invasion_rate_x",
    "boundary_occupation",
    "batch_means_se",
]


# occupation measures --------------------------------------------------------


@dataclass
class EmpiricalMeasure:
    edges: tuple              # per-axis bin edges
    counts: np.ndarray        # (b_1, ..., b_d, n_modes) accumulated weight
    total_weight: float
    burn_in: float

    @property
    def probabilities(self) -> np.ndarray:
        if self.total_weight <= 0:
            raise ValueError("empty measure")
        return self.counts / self.total_weight

    def mode_marginal(self) -> np.ndarray:
        p = self.probabilities
        return p.reshape(-1, p.shape[-1]).sum(axis=0)

    def same_binning(self, other: "EmpiricalMeasure") -> bool:
        return (len(self.edges) == len(other.edges)
                and all(np.array_equal(a, b) for a, b in zip(self.edges, other.edges))
                and self.counts.shape == other.counts.shape)


def _bin_edges(dom: CompactDomain, bins) -> tuple:
    if np.isscalar(bins):
        bins = (int(bins),) * dom.dimension
    lo, up = dom.bounding_box()
    return tuple(np.linspace(lo[k], up[k], bins[k] + 1) for k in range(dom.dimension))


def _histogram(states: np.ndarray, modes: np.ndarray, weights: np.ndarray,
               edges: tuple, n_modes: int) -> np.ndarray:
    shape = tuple(len(e) - 1 for e in edges) + (n_modes,)
    counts = np.zeros(shape)
    idx = []
    for k, e in enumerate(edges):
        j = np.clip(np.searchsorted(e, states[:, k], side="right") - 1, 0, len(e) - 2)
        idx.append(j)
    idx.append(np.asarray(modes, dtype=int))
    np.add.at(counts, tuple(idx), weights)
    return counts


def empirical_measure(trajectories, burn_in: float, bins, dom: CompactDomain,
                      n_modes: int) -> EmpiricalMeasure:
    """Time-weighted occupation histogram of (position, mode) after burn-in."""
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    edges = _bin_edges(dom, bins)
    shape = tuple(len(e) - 1 for e in edges) + (n_modes,)
    counts = np.zeros(shape)
    total = 0.0
    for traj in trajectories:
        keep = traj.sample_times >= burn_in
        if not np.any(keep):
            continue
        states = traj.sample_states[keep]
        if dom.kind == "torus":
            states = np.mod(states, 1.0)
        w = np.full(keep.sum(), 1.0)  # equal spacing: uniform time weights
        counts += _histogram(states, traj.sample_modes[keep], w, edges, n_modes)
        total += float(keep.sum())
    if total <= 0:
        raise ValueError("no samples survive the burn-in")
    return EmpiricalMeasure(edges=edges, counts=counts, total_weight=total, burn_in=burn_in)


def tv_distance(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> float:
    if not m1.same_binning(m2):
        raise ValueError("total variation requires identical binning")
    return 0.5 * float(np.abs(m1.probabilities - m2.probabilities).sum())


def _tv_counts(c1: np.ndarray, c2: np.ndarray) -> float:
    return 0.5 * float(np.abs(c1 / c1.sum() - c2 / c2.sum()).sum())


# TV decay ------------------------------------------------------------------


@dataclass
class TVDecayReport:
    times: np.ndarray
    tv_estimates: np.ndarray
    noise_floor: np.ndarray     # per-time same-law floor (incl. the global floor)
    fit_window: np.ndarray      # boolean mask of times used in the fit
    gamma: Optional[float]
    intercept: Optional[float]
    r_squared: Optional[float]
    bins: tuple
    replicates: int
    valid_fit: bool

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "tv", "noise_floor", "in_fit_window"])
        for t, tv, nf, w in zip(self.times, self.tv_estimates, self.noise_floor, self.fit_window):
            writer.writerow([repr(float(t)), repr(float(tv)), repr(float(nf)), int(w)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "bins": list(self.bins),
            "replicates": self.replicates,
            "valid_fit": self.valid_fit,
            "fit_points": int(self.fit_window.sum()),
        }


def tv_decay(fs: VectorFieldSet, rm: RateMatrixField, dom: CompactDomain, z0_a: tuple,
             z0_b: tuple, times: Sequence[float], replicates: int, bins, seed: int = 0,
             h_max: float = 0.02, floor_margin: float = 1.25) -> TVDecayReport:
    """Histogram TV between two ensembles at each time, with a decay fit.

    Each ensemble is split in halves; the reported TV at a time is the
    mean over the four cross half-pairings (same sub-ensemble size as the
    same-law floor, so the comparison is bias-consistent).  The fit uses
    times where the TV clears both the global floor ``2/sqrt(replicates)``
    and ``floor_margin`` times the measured same-law floor.
    """
    times = np.asarray(times, dtype=float)
    if np.isscalar(bins):
        bins = (int(bins),) * dom.dimension
    edges = _bin_edges(dom, bins)
    n_modes = rm.n_modes

    Xa, Ia = simulate_ensemble_states(fs, rm, dom, z0_a, times, replicates, seed, h_max=h_max)
    Xb, Ib = simulate_ensemble_states(fs, rm, dom, z0_b, times, replicates,
                                      int(np.random.SeedSequence((seed, 1)).generate_state(1)[0]),
                                      h_max=h_max)
    half = replicates // 2
    tv_est = np.empty(len(times))
    floor = np.empty(len(times))
    for k in range(len(times)):
        w = np.ones(half)
        ha1 = _histogram(Xa[k, :half], Ia[k, :half], w, edges, n_modes)
        ha2 = _histogram(Xa[k, half:2 * half], Ia[k, half:2 * half], w, edges, n_modes)
        hb1 = _histogram(Xb[k, :half], Ib[k, :half], w, edges, n_modes)
        hb2 = _histogram(Xb[k, half:2 * half], Ib[k, half:2 * half], w, edges, n_modes)
        tv_est[k] = np.mean([_tv_counts(ha1, hb1), _tv_counts(ha1, hb2),
                             _tv_counts(ha2, hb1), _tv_counts(ha2, hb2)])
        floor[k] = max(0.5 * (_tv_counts(ha1, ha2) + _tv_counts(hb1, hb2)),
                       2.0 / math.sqrt(replicates))
    window = tv_est > floor_margin * floor
    window &= tv_est > 2.0 / math.sqrt(replicates)
    gamma = intercept = r2 = None
    valid = int(window.sum()) >= 2
    if valid:
        tw = times[window]
        logtv = np.log(tv_est[window])
        slope, b = np.polyfit(tw, logtv, 1)
        gamma = float(-slope)
        intercept = float(b)
        pred = slope * tw + b
        ss_res = float(((logtv - pred) ** 2).sum())
        ss_tot = float(((logtv - logtv.mean()) ** 2).sum())
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return TVDecayReport(times=times, tv_estimates=tv_est, noise_floor=floor,
                         fit_window=window, gamma=gamma, intercept=intercept,
                         r_squared=r2, bins=tuple(bins), replicates=replicates,
                         valid_fit=valid)


# stationarity ----------------------------------------------------------------


def batch_means_se(samples: np.ndarray, n_batches: int = 30) -> float:
    """Standard error of the mean via batch means (correlation-robust)."""
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    if n < 2 * n_batches:
        n_batches = max(2, n // 2)
    size = n // n_batches
    means = samples[: n_batches * size].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


@dataclass
class StationarityResult:
    name: str
    residual: float
    se: float

    @property
    def within(self) -> float:
        """Residual in units of its standard error."""
        return abs(self.residual) / self.se if self.se > 0 else math.inf


def stationarity_residual(fs: VectorFieldSet, rm: RateMatrixField, traj: Trajectory,
                          test_functions: dict, burn_in: float = 0.0,
                          n_batches: int = 30) -> list[StationarityResult]:
    """Time averages of the generator along a trajectory.

    Under the invariant law the generator integrates to zero, so for each
    test function the post-burn-in average is a stationarity residual,
    reported with a batch-means standard error.
    """
    keep = traj.sample_times >= burn_in
    states = traj.sample_states[keep]
    modes = traj.sample_modes[keep]
    out = []
    for name, g in test_functions.items():
        vals = np.array([generator_apply(fs, rm, g, x, int(i)) for x, i in zip(states, modes)])
        out.append(StationarityResult(name=name, residual=float(vals.mean()),
                                      se=batch_means_se(vals, n_batches)))
    return out


# invasion rates ----------------------------------------------------------------


@dataclass
class InvasionRateResult:
    face: str
    estimate: float
    se: float

    def to_json(self) -> dict:
        return {"face": self.face, "invasion_rate": self.estimate, "se": self.se}


def _face_rate(face: str, growth: tuple, self_comp: tuple, cross_growth: tuple,
               cross_comp: tuple, rm: RateMatrixField, T: float, burn_in: float,
               seed: int, h: float, dt_out: float, n_batches: int) -> InvasionRateResult:
    """Ergodic average of the transversal growth rate on one extinction face.

    The boundary process is scalar: ``u' = growth_i u (1 - self_comp_i u)``
    switching by the same rate matrix; the integrand is
    ``cross_growth_i (1 - cross_comp_i u)``.
    """
    def make(i):
        g, sc = growth[i], self_comp[i]

        def ev(x):
            return (g * x[0] * (1.0 - sc * x[0]),)

        return ev

    fs1 = VectorFieldSet(tuple(make(i) for i in range(2)), 1, label=f"face-{face}")
    caps = [1.0 / sc for sc in self_comp]
    dom1 = CompactDomain.box([0.25 * min(caps)], [1.5 * max(caps)])
    x0 = np.array([min(caps)])
    cfg = SimConfig(T_max=T, dt_out=dt_out, flow=FlowConfig(h=h), seed=seed)
    traj = simulate(fs1, rm, dom1, (x0, 0), cfg)
    keep = traj.sample_times >= burn_in
    u = traj.sample_states[keep, 0]
    m = traj.sample_modes[keep]
    vals = np.array([cross_growth[i] * (1.0 - cross_comp[i] * ui) for ui, i in zip(u, m)])
    return InvasionRateResult(face=face, estimate=float(vals.mean()),
                              se=batch_means_se(vals, n_batches))


def invasion_rate_y(lv, rm: RateMatrixField, T: float = 10000.0, burn_in: float = 100.0,
                    seed: int = 0, h: float = 0.01, dt_out: float = 0.5,
                    n_batches: int = 30) -> InvasionRateResult:
    """Invasion rate of species y against the boundary process on y = 0."""
    return _face_rate("y", lv.alpha, lv.a, lv.beta, lv.c, rm, T, burn_in, seed,
                      h, dt_out, n_batches)


def invasion_rate_x(lv, rm: RateMatrixField, T: float = 10000.0, burn_in: float = 100.0,
                    seed: int = 0, h: float = 0.01, dt_out: float = 0.5,
                    n_batches: int = 30) -> InvasionRateResult:
    """Invasion rate of species x against the boundary process on x = 0."""
    return _face_rate("x", lv.beta, lv.d, lv.alpha, lv.b, rm, T, burn_in, seed,
                      h, dt_out, n_batches)


def boundary_occupation(traj: Trajectory, delta0: float, burn_in: float = 0.0,
                        distance: Optional[Callable] = None) -> float:
    """Fraction of post-burn-in time spent near the extinction set.

    ``distance`` maps a position to its distance from the extinction set;
    the default is the smallest coordinate magnitude (distance to the
    coordinate faces).
    """
    if distance is None:
        distance = lambda p: float(np.min(np.abs(p)))
    keep = traj.sample_times >= burn_in
    if not np.any(keep):
        raise ValueError("no samples survive the burn-in")
    d = np.array([distance(p) for p in traj.sample_states[keep]])
    return float(np.mean(d <= delta0))
