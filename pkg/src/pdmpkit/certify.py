"""Numerical certificates for the ergodicity hypotheses.

The pipeline checks, with explicit tolerances and budgets:

1. a vanishing barycentric combination of the fields at some point
   (weights sum to one, may be negative),
2. a point satisfying the weak bracket condition, reachable from the
   equilibrium of step 1 by composite flows,
3. reachability of that equilibrium from a seed grid of the whole domain,
4. optionally, full rank of the fixed-horizon endpoint map in its switch
   durations (a submersion certificate), corroborating the Doeblin-point
   mechanism behind the convergence statement.

Every verdict is *numerical evidence*, never a proof: certificates carry
their tolerances, budgets and seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .bracket import BracketReport, generate_family, rank_at, rank_from_vectors, scan
from .domain import CompactDomain
from .fields import FieldExpr, VectorFieldSet
from .flow import FlowConfig, SwitchSchedule, composite, duration_jacobian, flow

__all__ = [
    "EquilibriumCertificate",
    "ReachabilityResult",
    "SubmersionCertificate",
    "ErgodicityCertificate",
    "CertifyConfig",
    "solve_alpha",
    "find_condition_i",
    "explore_reachable",
    "accessible",
    "check_submersion",
    "find_submersion",
    "certify_ergodicity",
]

DEFAULT_TOL_EQ = 1e-8


# condition (i): vanishing barycentric combination --------------------------


@dataclass
class EquilibriumCertificate:
    e_star: np.ndarray
    alpha: np.ndarray
    residual: float
    valid: bool
    degenerate: bool = False
    solver_trace: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "e_star": [float(v) for v in self.e_star],
            "alpha": [float(v) for v in self.alpha],
            "residual": float(self.residual),
            "valid": self.valid,
            "degenerate": self.degenerate,
            "solver_trace": self.solver_trace,
        }


def solve_alpha(fs: VectorFieldSet, x) -> tuple[np.ndarray, float, bool]:
    """Best affine combination of the field values at x.

    Minimizes ``|B(x) alpha|`` subject to ``sum(alpha) = 1`` through the
    KKT system of the quadratic program; ties (singular KKT matrix) fall
    back to the least-norm solution and are flagged degenerate.

    Returns ``(alpha, residual, degenerate)``.
    """
    x = np.asarray(x, dtype=float)
    B = fs.value_matrix(x)
    N = fs.count
    K = np.zeros((N + 1, N + 1))
    K[:N, :N] = 2.0 * B.T @ B
    K[:N, N] = 1.0
    K[N, :N] = 1.0
    rhs = np.zeros(N + 1)
    rhs[N] = 1.0
    degenerate = False
    try:
        sol = np.linalg.solve(K, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        degenerate = True
    alpha = sol[:N]
    ssum = alpha.sum()
    if abs(ssum - 1.0) > 1e-9:  # lstsq may not honor the constraint exactly
        alpha = alpha + (1.0 - ssum) / N
        degenerate = True
    residual = float(np.linalg.norm(B @ alpha))
    return alpha, residual, degenerate


def _nelder_mead(objective, x0: np.ndarray, simplex_scale: float, maxiter: int = 200,
                 restarts: int = 2, xatol: float = 1e-10, fatol: float = 1e-14):
    """Nelder-Mead with restart-on-stall and explicit initial simplex size."""
    best_x, best_f = x0, objective(x0)
    scale = simplex_scale
    for _ in range(restarts + 1):
        d = len(best_x)
        simplex = np.vstack([best_x] + [best_x + scale * e for e in np.eye(d)])
        res = optimize.minimize(objective, best_x, method="Nelder-Mead",
                                options={"maxiter": maxiter, "xatol": xatol, "fatol": fatol,
                                         "initial_simplex": simplex})
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
        scale *= 0.3
    return best_x, best_f


def _kkt_residual_system(fs: VectorFieldSet, x: np.ndarray, a: np.ndarray):
    """Residual and Jacobian of (sum_i a_i F^i(x), sum(a) - 1) in (x, a)."""
    d, N = fs.dimension, fs.count
    B = fs.value_matrix(x)
    W = B @ a
    Jx = np.zeros((d, d))
    for i in range(N):
        if a[i] != 0.0:
            Jx += a[i] * fs.jacobian(i, x)
    r = np.concatenate([W, [a.sum() - 1.0]])
    J = np.zeros((d + 1, d + N))
    J[:d, :d] = Jx
    J[:d, d:] = B
    J[d, d:] = 1.0
    return r, J


def _polish_condition_i(fs: VectorFieldSet, dom: CompactDomain, x0: np.ndarray,
                        a0: np.ndarray, tol_eq: float, max_outer: int = 120):
    """Slide along the solution set of condition (i) to the most balanced
    certificate (smallest weight norm).

    The solutions of ``sum a_i F^i(x) = 0, sum a_i = 1`` form a manifold
    whenever several combinations vanish (e.g. a whole arc of equilibria);
    minimizing ``|alpha|`` on it picks a canonical representative and, for
    two fields, lands exactly on the balanced mixture point when one
    exists.  Gauss-Newton reprojection keeps the iterates on the manifold.
    """
    d = fs.dimension
    z = np.concatenate([x0, a0])

    def newton(z, iters=30):
        for _ in range(iters):
            x, a = z[:d], z[d:]
            r, J = _kkt_residual_system(fs, x, a)
            if np.linalg.norm(r) < 1e-13:
                break
            step = np.linalg.lstsq(J, r, rcond=None)[0]
            z = z - step
            z[:d] = dom.project(z[:d])
        return z

    z = newton(z)
    step_size = 0.25
    for _ in range(max_outer):
        x, a = z[:d], z[d:]
        r, J = _kkt_residual_system(fs, x, a)
        if np.linalg.norm(r) > 10.0 * tol_eq:
            break
        grad = np.concatenate([np.zeros(d), a])  # gradient of |alpha|^2 / 2
        # project the gradient on the tangent space of the solution manifold
        JJt = J @ J.T
        try:
            lam = np.linalg.solve(JJt, J @ grad)
        except np.linalg.LinAlgError:
            lam = np.linalg.lstsq(JJt, J @ grad, rcond=None)[0]
        tangent = grad - J.T @ lam
        if np.linalg.norm(tangent) < 1e-12:
            break
        improved = False
        while step_size > 1e-8:
            trial = newton(z - step_size * tangent, iters=8)
            if np.linalg.norm(trial[d:]) < np.linalg.norm(z[d:]) - 1e-15:
                z = trial
                improved = True
                step_size = min(step_size * 1.5, 1.0)
                break
            step_size *= 0.5
        if not improved:
            break
    z = newton(z)
    x, a = z[:d], z[d:]
    res = float(np.linalg.norm(fs.value_matrix(x) @ a))
    return x, a, res


def find_condition_i(fs: VectorFieldSet, dom: CompactDomain, seeds=None,
                     tol_eq: float = DEFAULT_TOL_EQ, maxiter: int = 200,
                     restarts: int = 2) -> EquilibriumCertificate:
    """Search the domain for a vanishing barycentric combination.

    Derivative-free descent of the optimal-combination residual runs from
    every seed (a grid resolution, an explicit point list, or a default
    coarse grid).  Candidate zeros are polished to the smallest-weight-norm
    point of their solution component; the best certificate overall is the
    one with the smallest weight norm (ties broken lexicographically by
    position).  When no candidate beats ``tol_eq`` the best residual found
    is reported with ``valid=False``.
    """
    if seeds is None:
        seeds = 8
    if np.isscalar(seeds) or (isinstance(seeds, tuple) and all(np.isscalar(v) for v in seeds)):
        seed_pts = dom.sample_grid(seeds)
    else:
        seed_pts = np.atleast_2d(np.asarray(seeds, dtype=float))
    diam = dom.diameter()

    def objective(x):
        return solve_alpha(fs, dom.project(x))[1]

    candidates = []
    best_fail = None
    for p in seed_pts:
        xm, fm = _nelder_mead(objective, np.asarray(p, dtype=float), 0.1 * diam,
                              maxiter=maxiter, restarts=restarts)
        xm = dom.project(xm)
        alpha, res, _ = solve_alpha(fs, xm)
        if res < tol_eq:
            xp, ap, rp = _polish_condition_i(fs, dom, xm, alpha, tol_eq)
            if rp < tol_eq:
                candidates.append((float(np.linalg.norm(ap)), tuple(xp), ap, rp))
                continue
            candidates.append((float(np.linalg.norm(alpha)), tuple(xm), alpha, res))
        elif best_fail is None or res < best_fail[1]:
            best_fail = (xm, res, alpha)
    trace = {"seeds": int(len(seed_pts)), "candidates": int(len(candidates)), "tol_eq": tol_eq}
    if candidates:
        candidates.sort(key=lambda c: (c[0], c[1]))
        norm_a, xt, alpha, res = candidates[0]
        return EquilibriumCertificate(
            e_star=np.array(xt), alpha=alpha, residual=res, valid=True, solver_trace=trace)
    x, res, alpha = best_fail
    trace["note"] = "no residual below tol_eq; best failure reported"
    return EquilibriumCertificate(e_star=x, alpha=alpha, residual=res, valid=False,
                                  solver_trace=trace)


# reachability ----------------------------------------------------------------


@dataclass
class ReachTree:
    points: np.ndarray        # (n, d) in the working chart
    parents: np.ndarray       # (n,) int; -1 for the root
    leg_indices: np.ndarray   # field used to reach node k from its parent
    leg_durations: np.ndarray
    nodes_expanded: int

    def schedule_to(self, k: int) -> SwitchSchedule:
        idx, dur = [], []
        while k > 0:
            idx.append(int(self.leg_indices[k]))
            dur.append(float(self.leg_durations[k]))
            k = int(self.parents[k])
        return SwitchSchedule.make(idx[::-1], dur[::-1])


@dataclass
class ReachabilityResult:
    target: np.ndarray
    start: np.ndarray
    delta: float
    success: bool
    witness: Optional[SwitchSchedule]
    closest_distance: float
    nodes_expanded: int

    def to_json(self) -> dict:
        return {
            "target": [float(v) for v in self.target],
            "start": [float(v) for v in self.start],
            "delta": self.delta,
            "success": self.success,
            "witness": self.witness.to_json() if self.witness else None,
            "closest_distance": self.closest_distance,
            "nodes_expanded": self.nodes_expanded,
        }


def explore_reachable(fs: VectorFieldSet, dom: CompactDomain, x0, budget: int,
                      tau_max: float = 1.0, rng_seed: int = 0,
                      cfg: Optional[FlowConfig] = None,
                      target=None, delta: float = 0.0) -> ReachTree:
    """Randomized tree of composite-flow endpoints rooted at x0.

    Each expansion picks a tree node (nearest to a fresh random goal with
    probability 1/2, uniformly otherwise), a uniform field index, and a
    duration uniform on (0, tau_max], then integrates one leg.  With a
    target given, expansion stops as soon as a node lands within delta.
    """
    cfg = cfg or FlowConfig(h=1e-2)
    rng = np.random.default_rng(rng_seed)
    x0 = np.asarray(x0, dtype=float)
    d = dom.dimension
    pts = np.empty((budget + 1, d))
    parents = np.full(budget + 1, -1, dtype=int)
    legs_i = np.zeros(budget + 1, dtype=int)
    legs_u = np.zeros(budget + 1)
    pts[0] = x0
    count = 1

    def dist_to(q):
        if dom.kind == "torus":
            diff = np.abs(np.mod(pts[:count], 1.0) - np.mod(q, 1.0))
            diff = np.minimum(diff, 1.0 - diff)
            return np.sqrt((diff ** 2).sum(axis=1))
        if dom.kind == "annulus":
            px = pts[:count, 1] * np.cos(pts[:count, 0])
            py = pts[:count, 1] * np.sin(pts[:count, 0])
            qc = np.array([q[1] * np.cos(q[0]), q[1] * np.sin(q[0])])
            return np.hypot(px - qc[0], py - qc[1])
        return np.sqrt(((pts[:count] - q) ** 2).sum(axis=1))

    if target is not None and dom.distance(x0, np.asarray(target, dtype=float)) <= delta:
        return ReachTree(pts[:1], parents[:1], legs_i[:1], legs_u[:1], nodes_expanded=0)

    for n in range(budget):
        if rng.random() < 0.5:
            goal = dom.sample_uniform(rng)
            node = int(np.argmin(dist_to(goal)))
        else:
            node = int(rng.integers(count))
        i = int(rng.integers(fs.count))
        tau = tau_max * (1.0 - rng.random())  # uniform on (0, tau_max]
        try:
            new = flow(fs, i, tau, pts[node], cfg, dom)
        except Exception:
            continue  # a leg that blows up just fails to extend the tree
        pts[count] = new
        parents[count] = node
        legs_i[count] = i
        legs_u[count] = tau
        count += 1
        if target is not None and dom.distance(new, np.asarray(target, dtype=float)) <= delta:
            break
    return ReachTree(pts[:count].copy(), parents[:count].copy(), legs_i[:count].copy(),
                     legs_u[:count].copy(), nodes_expanded=count - 1)


def accessible(fs: VectorFieldSet, dom: CompactDomain, target, from_set, delta: float,
               budget: int, rng_seed: int = 0, tau_max: float = 1.0,
               cfg: Optional[FlowConfig] = None) -> list[ReachabilityResult]:
    """Can the target be approached from every start by composite flows?

    Runs one exploration tree per start with a seed derived from
    ``(rng_seed, start index)``.  Success means some node of the tree lies
    within delta of the target (chart-aware distance).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    target = np.asarray(target, dtype=float)
    results = []
    for k, start in enumerate(np.atleast_2d(np.asarray(from_set, dtype=float))):
        seed = int(np.random.SeedSequence((rng_seed, k)).generate_state(1)[0])
        tree = explore_reachable(fs, dom, start, budget, tau_max, seed, cfg,
                                 target=target, delta=delta)
        dists = np.array([dom.distance(p, target) for p in tree.points])
        best = int(np.argmin(dists))
        success = bool(dists[best] <= delta)
        results.append(ReachabilityResult(
            target=target,
            start=np.asarray(start, dtype=float),
            delta=delta,
            success=success,
            witness=tree.schedule_to(best) if success else None,
            closest_distance=float(dists[best]),
            nodes_expanded=tree.nodes_expanded,
        ))
    return results


# submersion -------------------------------------------------------------------


@dataclass
class SubmersionCertificate:
    base: np.ndarray
    schedule: SwitchSchedule
    terminal_index: int
    s: float
    singular_values: np.ndarray
    rank: int
    sigma_min_kept: float
    valid: bool

    def to_json(self) -> dict:
        return {
            "base": [float(v) for v in self.base],
            "schedule": self.schedule.to_json(),
            "terminal_index": int(self.terminal_index),
            "s": float(self.s),
            "singular_values": [float(v) for v in self.singular_values],
            "rank": int(self.rank),
            "sigma_min_kept": float(self.sigma_min_kept),
            "valid": self.valid,
        }


def check_submersion(fs: VectorFieldSet, base, schedule: SwitchSchedule, terminal_index: int,
                     s: float, cfg: Optional[FlowConfig] = None,
                     eps_abs: float = 1e-9, eps_rel: float = 1e-6) -> SubmersionCertificate:
    """Rank certificate for the duration Jacobian of the endpoint map."""
    base = np.asarray(base, dtype=float)
    J = duration_jacobian(fs, schedule, terminal_index, s, base, cfg)
    sv, rank, _ = rank_from_vectors(J, eps_abs, eps_rel)
    kept = float(sv[rank - 1]) if rank > 0 else 0.0
    return SubmersionCertificate(
        base=base, schedule=schedule, terminal_index=terminal_index, s=s,
        singular_values=sv, rank=rank, sigma_min_kept=kept, valid=rank == fs.dimension)


def find_submersion(fs: VectorFieldSet, base, budget: int = 200,
                    m_range: tuple = (1, 4), s_range: tuple = (1.0, 3.0),
                    rng_seed: int = 0, cfg: Optional[FlowConfig] = None) -> SubmersionCertificate:
    """Random search over switching schedules for a full-rank certificate.

    Schedule lengths are drawn from ``m_range`` (inclusive), total horizon
    from ``s_range``, leg durations uniformly with total below the
    horizon.  Returns the first valid certificate, else the best
    (largest kept singular value) among the attempts.
    """
    rng = np.random.default_rng(rng_seed)
    base = np.asarray(base, dtype=float)
    best = None
    for _ in range(budget):
        m = int(rng.integers(m_range[0], m_range[1] + 1))
        s = float(rng.uniform(*s_range))
        indices = rng.integers(fs.count, size=m)
        terminal = int(rng.integers(fs.count))
        durations = rng.uniform(0.0, s / (m + 1), size=m)
        sched = SwitchSchedule.make(indices, durations)
        try:
            cert = check_submersion(fs, base, sched, terminal, s, cfg)
        except Exception:
            continue
        if cert.valid:
            return cert
        if best is None or cert.sigma_min_kept > best.sigma_min_kept:
            best = cert
    if best is None:
        raise RuntimeError("submersion search could not evaluate any schedule")
    return best


# full pipeline ------------------------------------------------------------------


@dataclass
class CertifyConfig:
    seed: int = 0
    tol_eq: float = DEFAULT_TOL_EQ
    eq_seeds: object = 8                  # grid resolution or explicit points
    bracket_depth: int = 2
    bracket_grid: object = 12
    reach_delta: float = 0.05
    reach_budget: int = 4000
    reach_tau_max: float = 1.0
    global_grid: object = 4               # seed grid for accessibility of e*
    exclusion_radius: float = 0.0         # drop seeds this close to the extinction set
    extinction_distance: Optional[object] = None  # callable point -> distance
    weak_point_candidates: int = 5
    with_submersion: bool = False
    submersion_budget: int = 120
    submersion_m_range: tuple = (1, 4)
    submersion_s_range: tuple = (1.0, 3.0)
    flow: FlowConfig = field(default_factory=lambda: FlowConfig(h=1e-2))


@dataclass
class ErgodicityCertificate:
    label: str
    condition_i: EquilibriumCertificate
    weak_point: Optional[np.ndarray]
    weak_report: Optional[BracketReport]
    reach_estar_to_xstar: Optional[ReachabilityResult]
    reach_global_to_estar: list
    submersion: Optional[SubmersionCertificate]
    verdict: str
    statuses: dict

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "verdict": self.verdict,
            "statuses": self.statuses,
            "condition_i": self.condition_i.to_json(),
            "weak_point": [float(v) for v in self.weak_point] if self.weak_point is not None else None,
            "weak_report": self.weak_report.to_json() if self.weak_report else None,
            "reach_estar_to_xstar": self.reach_estar_to_xstar.to_json() if self.reach_estar_to_xstar else None,
            "reach_global_to_estar": [r.to_json() for r in self.reach_global_to_estar],
            "submersion": self.submersion.to_json() if self.submersion else None,
        }


def certify_ergodicity(fs: VectorFieldSet, dom: CompactDomain,
                       config: Optional[CertifyConfig] = None) -> ErgodicityCertificate:
    """Run the whole certification pipeline and assemble a verdict.

    ``certified-numerically`` requires all hypotheses to hold at their
    tolerances; ``partial`` means some held; ``failed`` means none did.
    """
    cfg = config or CertifyConfig()
    statuses = {}

    cert_i = find_condition_i(fs, dom, cfg.eq_seeds, cfg.tol_eq)
    statuses["condition_i"] = cert_i.valid

    # weak bracket point, preferring candidates close to e*
    sc = scan(fs, dom, "weak", cfg.bracket_depth, cfg.bracket_grid)
    holders = [r for r in sc.reports if r.holds]
    weak_point = None
    weak_report = None
    reach_ii = None
    if holders:
        anchor = cert_i.e_star if cert_i.valid else np.asarray(holders[0].point, dtype=float)
        holders.sort(key=lambda r: dom.distance(r.point, anchor))
        if cert_i.valid:
            for r in holders[: cfg.weak_point_candidates]:
                res = accessible(fs, dom, r.point, [cert_i.e_star], cfg.reach_delta,
                                 cfg.reach_budget, cfg.seed, cfg.reach_tau_max, cfg.flow)[0]
                if res.success:
                    weak_point, weak_report, reach_ii = r.point, r, res
                    break
                if reach_ii is None:
                    weak_point, weak_report, reach_ii = r.point, r, res
        else:
            weak_point, weak_report = holders[0].point, holders[0]
    statuses["weak_bracket_point"] = weak_report is not None
    statuses["reach_estar_to_xstar"] = bool(reach_ii and reach_ii.success)

    # global accessibility of e*
    reach_global = []
    if cert_i.valid:
        seeds = dom.sample_grid(cfg.global_grid)
        if cfg.exclusion_radius > 0.0:
            dist = cfg.extinction_distance or (lambda p: float(np.min(np.abs(p))))
            seeds = np.array([p for p in seeds if dist(p) > cfg.exclusion_radius])
        reach_global = accessible(fs, dom, cert_i.e_star, seeds, cfg.reach_delta,
                                  cfg.reach_budget, cfg.seed + 1, cfg.reach_tau_max, cfg.flow)
        statuses["reach_global_to_estar"] = all(r.success for r in reach_global)
    else:
        statuses["reach_global_to_estar"] = False

    submersion = None
    if cfg.with_submersion and cert_i.valid:
        submersion = find_submersion(fs, cert_i.e_star, cfg.submersion_budget,
                                     cfg.submersion_m_range, cfg.submersion_s_range,
                                     cfg.seed + 2, cfg.flow)
        statuses["submersion"] = submersion.valid

    core = [statuses["condition_i"], statuses["weak_bracket_point"],
            statuses["reach_estar_to_xstar"], statuses["reach_global_to_estar"]]
    if all(core):
        verdict = "certified-numerically"
    elif any(core):
        verdict = "partial"
    else:
        verdict = "failed"
    return ErgodicityCertificate(
        label=fs.label,
        condition_i=cert_i,
        weak_point=np.asarray(weak_point, dtype=float) if weak_point is not None else None,
        weak_report=weak_report,
        reach_estar_to_xstar=reach_ii,
        reach_global_to_estar=reach_global,
        submersion=submersion,
        verdict=verdict,
        statuses=statuses,
    )
