"""Families of smooth vector fields with brackets and barycentric combinations.

Evaluators are written in *component style*: they take an indexable
sequence of ``d`` scalar components and return a sequence of ``d`` scalar
expressions.  Components may be floats, numpy arrays of batch points, or
:class:`~pdmpkit.jets.Dual` jets, so one evaluator serves pointwise
evaluation, whole-grid evaluation and (nested) differentiation.

Bracket convention is the definitional one,

    [V, W](x) = DW(x) V(x) - DV(x) W(x),

fixed once here and asserted against the model zoo in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import jets
from .jets import Dual, tangent

__all__ = [
    "VectorFieldSet",
    "FieldExpr",
    "FieldEvaluationError",
    "evaluate_expr",
    "evaluate_expr_batch",
    "expr_jacobian",
    "lie_bracket",
]

DEFAULT_H_FD = 1e-5
MAX_BRACKET_DEPTH = 4


class FieldEvaluationError(RuntimeError):
    """Non-finite field value or jet failure at an evaluation point."""


@dataclass(frozen=True)
class VectorFieldSet:
    """The family ``{F^i}`` of smooth vector fields on one chart.

    ``evaluators[i]`` is the component-style map for field i.  Black-box
    fields that cannot consume jets should set ``supports_jets=False``;
    differentiation then falls back to central differences.
    """

    evaluators: tuple
    dimension: int
    chart: str = "cartesian"
    label: str = ""
    supports_jets: bool = True

    def __post_init__(self):
        if len(self.evaluators) < 1:
            raise ValueError("need at least one vector field")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")

    @property
    def count(self) -> int:
        return len(self.evaluators)

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.count:
            raise IndexError(f"field index {i} out of range 0..{self.count - 1}")

    def default_mode(self) -> str:
        return "jet" if self.supports_jets else "fd"

    # evaluation --------------------------------------------------------

    def components(self, i: int, xs):
        """Raw component-style evaluation (scalars stay generic)."""
        self._check_index(i)
        return list(self.evaluators[i](xs))

    def eval(self, i: int, x) -> np.ndarray:
        """F^i(x) for a float point x of shape (d,)."""
        x = np.asarray(x, dtype=float)
        out = np.array([float(c) for c in self.components(i, x)])
        if not np.all(np.isfinite(out)):
            raise FieldEvaluationError(f"field {i} non-finite at {x!r}")
        return out

    def compiled(self, i: int):
        """Plain float evaluator without validation, for hot loops."""
        self._check_index(i)
        ev = self.evaluators[i]

        def f(x):
            return np.array(ev(x), dtype=float)

        return f

    def eval_batch(self, i: int, X) -> np.ndarray:
        """F^i over a batch of points, shape (n, d) -> (n, d)."""
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        comps = self.components(i, X.T)
        cols = [np.broadcast_to(np.asarray(c, dtype=float), (n,)) for c in comps]
        return np.stack(cols, axis=-1)

    def jacobian(self, i: int, x, mode: Optional[str] = None, h_fd: float = DEFAULT_H_FD) -> np.ndarray:
        """DF^i(x); entry (a, b) is the derivative of component a along axis b."""
        mode = mode or self.default_mode()
        J = expr_jacobian(self, FieldExpr.gen(i), x, mode=mode, h_fd=h_fd)
        if not np.all(np.isfinite(J)):
            raise FieldEvaluationError(f"jacobian of field {i} non-finite at {x!r}")
        return J

    def barycentric(self, alpha, x) -> np.ndarray:
        """``sum_i alpha_i F^i(x)`` for weights summing to one.

        The weights may be negative; only the affine constraint is
        enforced (to 1e-12).
        """
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (self.count,):
            raise ValueError(f"expected {self.count} weights, got shape {alpha.shape}")
        if abs(alpha.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {alpha.sum()!r}")
        x = np.asarray(x, dtype=float)
        out = np.zeros(self.dimension)
        for i, a in enumerate(alpha):
            if a != 0.0:
                out += a * self.eval(i, x)
        return out

    def value_matrix(self, x) -> np.ndarray:
        """d x N matrix whose columns are the field values at x."""
        return np.stack([self.eval(i, x) for i in range(self.count)], axis=-1)


@dataclass(frozen=True)
class FieldExpr:
    """A bracket expression over the family.

    Leaves are generators ``F^i`` (weak family) or canonical differences
    ``F^i - F^j`` with i < j (strong family); internal nodes are
    ``[F^i, sub]``, matching the family recursion where the left bracket
    argument is always a generator.
    """

    op: str  # "gen" | "diff" | "bracket"
    i: int
    j: int = -1
    sub: Optional["FieldExpr"] = None
    depth: int = field(default=0, compare=False)

    @staticmethod
    def gen(i: int) -> "FieldExpr":
        return FieldExpr("gen", i)

    @staticmethod
    def diff(i: int, j: int) -> "FieldExpr":
        if i == j:
            raise ValueError("difference of a field with itself is zero")
        if i > j:
            i, j = j, i
        return FieldExpr("diff", i, j)

    @staticmethod
    def bracket(i: int, sub: "FieldExpr") -> "FieldExpr":
        return FieldExpr("bracket", i, -1, sub, sub.depth + 1)

    def label(self) -> str:
        if self.op == "gen":
            return f"F{self.i}"
        if self.op == "diff":
            return f"F{self.i}-F{self.j}"
        return f"[F{self.i},{self.sub.label()}]"


# expression evaluation engine -----------------------------------------


def _components(fs: VectorFieldSet, expr: FieldExpr, xs, mode: str, h_fd: float):
    if expr.op == "gen":
        return fs.components(expr.i, xs)
    if expr.op == "diff":
        a = fs.components(expr.i, xs)
        b = fs.components(expr.j, xs)
        return [ai - bi for ai, bi in zip(a, b)]
    # bracket node: [F^i, sub] = D(sub) F^i - D(F^i) sub
    d = fs.dimension
    v = fs.components(expr.i, xs)
    w = _components(fs, expr.sub, xs, mode, h_fd)
    jw = _jac_components(fs, expr.sub, xs, mode, h_fd)
    jv = _jac_components(fs, FieldExpr.gen(expr.i), xs, mode, h_fd)
    out = []
    for a in range(d):
        acc = jw[a][0] * v[0] - jv[a][0] * w[0]
        for b in range(1, d):
            acc = acc + jw[a][b] * v[b] - jv[a][b] * w[b]
        out.append(acc)
    return out


def _jac_components(fs: VectorFieldSet, expr: FieldExpr, xs, mode: str, h_fd: float):
    """Jacobian of an expression as nested lists jw[a][b] = dW_a/dx_b."""
    d = fs.dimension
    if mode == "jet":
        cols = []
        for b in range(d):
            seeded = jets.seed(list(xs), b)
            comps = _components(fs, expr, seeded, mode, h_fd)
            cols.append([tangent(c) for c in comps])
        return [[cols[b][a] for b in range(d)] for a in range(d)]
    # central differences; step grows with the bracket depth of the
    # differentiated expression to balance truncation against cancellation
    x = np.asarray(list(xs), dtype=float)
    h = (h_fd ** (1.0 / (expr.depth + 1))) * (1.0 + float(np.linalg.norm(x)))
    cols = []
    for b in range(d):
        e = np.zeros(d)
        e[b] = h
        plus = _components(fs, expr, x + e, mode, h_fd)
        minus = _components(fs, expr, x - e, mode, h_fd)
        cols.append([(p - m) / (2.0 * h) for p, m in zip(plus, minus)])
    return [[cols[b][a] for b in range(d)] for a in range(d)]


def evaluate_expr(fs: VectorFieldSet, expr: FieldExpr, x, mode: Optional[str] = None,
                  h_fd: float = DEFAULT_H_FD) -> np.ndarray:
    """Evaluate a bracket expression at a float point."""
    mode = mode or fs.default_mode()
    x = np.asarray(x, dtype=float)
    out = np.array([float(c) for c in _components(fs, expr, x, mode, h_fd)])
    if not np.all(np.isfinite(out)):
        raise FieldEvaluationError(f"expression {expr.label()} non-finite at {x!r}")
    return out


def evaluate_expr_batch(fs: VectorFieldSet, expr: FieldExpr, X) -> np.ndarray:
    """Evaluate a bracket expression on a whole batch, (n, d) -> (n, d).

    Uses jets (arrays ride inside the duals), so this is exact and fast
    even for deeply nested brackets.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    comps = _components(fs, expr, list(X.T), "jet", DEFAULT_H_FD)
    cols = [np.broadcast_to(np.asarray(c, dtype=float), (n,)) for c in comps]
    return np.stack(cols, axis=-1)


def expr_jacobian(fs: VectorFieldSet, expr: FieldExpr, x, mode: Optional[str] = None,
                  h_fd: float = DEFAULT_H_FD) -> np.ndarray:
    mode = mode or fs.default_mode()
    x = np.asarray(x, dtype=float)
    jw = _jac_components(fs, expr, x, mode, h_fd)
    return np.array([[float(jw[a][b]) for b in range(fs.dimension)] for a in range(fs.dimension)])


def lie_bracket(fs: VectorFieldSet, V: FieldExpr, W: FieldExpr, x, mode: Optional[str] = None,
                h_fd: float = DEFAULT_H_FD, max_depth: int = MAX_BRACKET_DEPTH) -> np.ndarray:
    """[V, W](x) = DW(x) V(x) - DV(x) W(x) for arbitrary expressions."""
    if max(V.depth, W.depth) + 1 > max_depth:
        raise ValueError(f"bracket depth would exceed the configured maximum {max_depth}")
    mode = mode or fs.default_mode()
    x = np.asarray(x, dtype=float)
    v = evaluate_expr(fs, V, x, mode, h_fd)
    w = evaluate_expr(fs, W, x, mode, h_fd)
    jv = expr_jacobian(fs, V, x, mode, h_fd)
    jw = expr_jacobian(fs, W, x, mode, h_fd)
    return jw @ v - jv @ w
