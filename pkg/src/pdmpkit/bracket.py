"""Bracket families, pointwise span ranks, and grid scans.

The weak family starts from the generators and the strong family from
their pairwise differences; both grow by bracketing with generators on
the left.  Rank decisions are singular-value counts against a relative
tolerance with an absolute floor.  Since only finitely many levels are
computable, a full-rank result certifies "holds at depth K" while a
failure at the depth cap only means "not established".
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .domain import CompactDomain
from .fields import FieldExpr, VectorFieldSet, evaluate_expr, evaluate_expr_batch

__all__ = [
    "BracketReport",
    "ScanResult",
    "generate_family",
    "rank_from_vectors",
    "rank_at",
    "scan",
]

DEFAULT_EPS_ABS = 1e-9
DEFAULT_EPS_REL = 1e-6
MAX_FAMILY_SIZE = 512
MAX_DEPTH = 4


@dataclass
class BracketReport:
    """Span evidence for one family at one point."""

    point: np.ndarray
    family_kind: str
    depth_used: int
    vectors_evaluated: int
    singular_values: np.ndarray  # descending
    numerical_rank: int
    tolerance_used: float
    holds: bool

    @property
    def sigma_min_kept(self) -> float:
        if self.numerical_rank == 0:
            return 0.0
        return float(self.singular_values[self.numerical_rank - 1])

    def to_json(self) -> dict:
        return {
            "point": [float(v) for v in self.point],
            "family_kind": self.family_kind,
            "depth_used": self.depth_used,
            "vectors_evaluated": self.vectors_evaluated,
            "singular_values": [float(s) for s in self.singular_values],
            "numerical_rank": self.numerical_rank,
            "tolerance_used": self.tolerance_used,
            "holds": self.holds,
        }


def generate_family(fs: VectorFieldSet, kind: str, K: int,
                    max_size: int = MAX_FAMILY_SIZE) -> list[FieldExpr]:
    """Expression list for the weak or strong family up to depth K.

    Deduplication: identical trees appear once, self-brackets of a
    generator are dropped, depth-1 generator pairs keep only i < j (the
    flip is a sign change and spans the same line), and difference leaves
    are canonicalized with i < j.
    """
    if kind not in ("weak", "strong"):
        raise ValueError("kind must be 'weak' or 'strong'")
    if K > MAX_DEPTH:
        raise ValueError(f"depth {K} exceeds the configured maximum {MAX_DEPTH}")
    N = fs.count
    if kind == "weak":
        level = [FieldExpr.gen(i) for i in range(N)]
    else:
        level = [FieldExpr.diff(i, j) for i in range(N) for j in range(i + 1, N)]
    family = list(level)
    seen = set(family)
    for _ in range(K):
        new_level = []
        for i in range(N):
            for V in level:
                if V.op == "gen":
                    if V.i == i:
                        continue  # [F^i, F^i] = 0
                    if kind == "weak" and i > V.i:
                        continue  # antisymmetric twin of [F^{V.i}, F^i]
                expr = FieldExpr.bracket(i, V)
                if expr in seen:
                    continue
                seen.add(expr)
                new_level.append(expr)
                if len(family) + len(new_level) >= max_size:
                    return family + new_level
        family.extend(new_level)
        level = new_level
        if not level:
            break
    return family


def rank_from_vectors(vectors: np.ndarray, eps_abs: float = DEFAULT_EPS_ABS,
                      eps_rel: float = DEFAULT_EPS_REL) -> tuple[np.ndarray, int, float]:
    """Singular values (descending), numerical rank, and the tolerance used.

    ``vectors`` has one column per family member.  Rank counts singular
    values above max(eps_abs, eps_rel * sigma_1).
    """
    sv = np.linalg.svd(np.asarray(vectors, dtype=float), compute_uv=False)
    tol = max(eps_abs, eps_rel * (sv[0] if sv.size else 0.0))
    rank = int(np.sum(sv > tol))
    return sv, rank, tol


def rank_at(fs: VectorFieldSet, exprs: Iterable[FieldExpr], x, mode: Optional[str] = None,
            eps_abs: float = DEFAULT_EPS_ABS, eps_rel: float = DEFAULT_EPS_REL,
            family_kind: str = "custom") -> BracketReport:
    """Evaluate the expressions at x and report the numerical span rank."""
    exprs = list(exprs)
    if not exprs:
        raise ValueError("need at least one expression")
    x = np.asarray(x, dtype=float)
    vectors = np.stack([evaluate_expr(fs, e, x, mode) for e in exprs], axis=-1)
    sv, rank, tol = rank_from_vectors(vectors, eps_abs, eps_rel)
    depth = max(e.depth for e in exprs)
    return BracketReport(
        point=x,
        family_kind=family_kind,
        depth_used=depth,
        vectors_evaluated=len(exprs),
        singular_values=sv,
        numerical_rank=rank,
        tolerance_used=tol,
        holds=rank == fs.dimension,
    )


@dataclass
class ScanResult:
    kind: str
    depth: int
    reports: list  # BracketReport per grid point, in grid order
    max_rank: int = field(init=False)
    argmax_points: list = field(init=False)
    holds_somewhere: bool = field(init=False)
    holds_everywhere: bool = field(init=False)

    def __post_init__(self):
        ranks = [r.numerical_rank for r in self.reports]
        self.max_rank = max(ranks) if ranks else 0
        self.argmax_points = [r.point for r in self.reports if r.numerical_rank == self.max_rank]
        self.holds_somewhere = any(r.holds for r in self.reports)
        self.holds_everywhere = bool(self.reports) and all(r.holds for r in self.reports)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "depth": self.depth,
            "max_rank": self.max_rank,
            "holds_somewhere": self.holds_somewhere,
            "holds_everywhere": self.holds_everywhere,
            "n_points": len(self.reports),
            "argmax_points": [[float(v) for v in p] for p in self.argmax_points[:16]],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        d = len(self.reports[0].point) if self.reports else 0
        writer.writerow([f"x{k}" for k in range(d)] + ["kind", "depth", "rank", "sigma_min_kept"])
        for r in self.reports:
            writer.writerow([repr(float(v)) for v in r.point]
                            + [self.kind, self.depth, r.numerical_rank, repr(r.sigma_min_kept)])
        return buf.getvalue()


def scan(fs: VectorFieldSet, dom: CompactDomain, kind: str, K: int, grid_res,
         eps_abs: float = DEFAULT_EPS_ABS, eps_rel: float = DEFAULT_EPS_REL) -> ScanResult:
    """rank_at over a domain lattice, evaluated batched for speed."""
    exprs = generate_family(fs, kind, K)
    grid = dom.sample_grid(grid_res)
    stacks = np.stack([evaluate_expr_batch(fs, e, grid) for e in exprs], axis=-1)  # (n, d, m)
    depth = max(e.depth for e in exprs)
    reports = []
    for pt, vectors in zip(grid, stacks):
        sv, rank, tol = rank_from_vectors(vectors, eps_abs, eps_rel)
        reports.append(BracketReport(
            point=pt,
            family_kind=kind,
            depth_used=depth,
            vectors_evaluated=len(exprs),
            singular_values=sv,
            numerical_rank=rank,
            tolerance_used=tol,
            holds=rank == fs.dimension,
        ))
    return ScanResult(kind=kind, depth=K, reports=reports)
