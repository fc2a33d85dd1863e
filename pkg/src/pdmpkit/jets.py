"""Forward-mode first-order jets with nestable, broadcastable components.

A :class:`Dual` carries a value together with the derivative of that value
along one seed direction.  Components may be plain floats, numpy arrays
(one entry per batch point), or further ``Dual`` instances; nesting duals
inside duals yields second- and higher-order directional derivatives, which
is what iterated Lie brackets need.

Model vector fields are written against the dispatch helpers at the bottom
of this module (``sin``, ``exp``, ``where``, ...) so the very same evaluator
code runs on floats, on whole grids, and on jets.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Dual",
    "value",
    "tangent",
    "seed",
    "sin",
    "cos",
    "exp",
    "log",
    "sqrt",
    "absolute",
    "where",
    "less",
    "const_floor",
]


class Dual:
    """Value plus one directional derivative (a first-order jet)."""

    __slots__ = ("val", "dot")

    def __init__(self, val, dot=0.0):
        self.val = val
        self.dot = dot

    def __repr__(self):
        return f"Dual({self.val!r}, {self.dot!r})"

    # arithmetic ------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.dot + other.dot)
        return Dual(self.val + other, self.dot)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.dot - other.dot)
        return Dual(self.val - other, self.dot)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.dot)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.dot * other.val + self.val * other.dot)
        return Dual(self.val * other, self.dot * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(self.val * inv, (self.dot - self.val * inv * other.dot) * inv)
        return Dual(self.val / other, self.dot / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        v = other * inv
        return Dual(v, -v * inv * self.dot)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only numeric exponents are supported")
        return Dual(self.val ** p, p * self.val ** (p - 1) * self.dot)

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __pos__(self):
        return self

    # comparisons act on primal values (used for support tests) -------

    def __lt__(self, other):
        return self.val < value(other)

    def __le__(self, other):
        return self.val <= value(other)

    def __gt__(self, other):
        return self.val > value(other)

    def __ge__(self, other):
        return self.val >= value(other)

    # elementary functions --------------------------------------------

    def sin(self):
        return Dual(sin(self.val), cos(self.val) * self.dot)

    def cos(self):
        return Dual(cos(self.val), -sin(self.val) * self.dot)

    def exp(self):
        e = exp(self.val)
        return Dual(e, e * self.dot)

    def log(self):
        return Dual(log(self.val), self.dot / self.val)

    def sqrt(self):
        s = sqrt(self.val)
        return Dual(s, 0.5 / s * self.dot)

    def absolute(self):
        return Dual(absolute(self.val), np.sign(value_deep(self.val)) * self.dot)


def value(x):
    """Primal value of ``x`` (identity for non-duals)."""
    return x.val if isinstance(x, Dual) else x


def value_deep(x):
    """Innermost primal value, unwrapping nested duals."""
    while isinstance(x, Dual):
        x = x.val
    return x


def tangent(x):
    """Tangent of ``x`` (zero for non-duals)."""
    return x.dot if isinstance(x, Dual) else 0.0


def seed(components, direction):
    """Wrap the components of a point as duals seeded along one axis."""
    return [Dual(c, 1.0 if k == direction else 0.0) for k, c in enumerate(components)]


# dispatchers: Dual method, numpy ufunc otherwise ----------------------


def sin(x):
    return x.sin() if isinstance(x, Dual) else np.sin(x)


def cos(x):
    return x.cos() if isinstance(x, Dual) else np.cos(x)


def exp(x):
    return x.exp() if isinstance(x, Dual) else np.exp(x)


def log(x):
    return x.log() if isinstance(x, Dual) else np.log(x)


def sqrt(x):
    return x.sqrt() if isinstance(x, Dual) else np.sqrt(x)


def absolute(x):
    return x.absolute() if isinstance(x, Dual) else np.abs(x)


def less(a, b):
    """Primal-value comparison, safe for duals and arrays."""
    return value_deep(a) < value_deep(b)


def where(cond, a, b):
    """Elementwise select that propagates tangents through both branches.

    ``cond`` must be tangent-free (a bool or bool array computed from
    primal values); the selection itself is treated as locally constant.
    """
    if isinstance(a, Dual) or isinstance(b, Dual):
        av, ad = (a.val, a.dot) if isinstance(a, Dual) else (a, 0.0)
        bv, bd = (b.val, b.dot) if isinstance(b, Dual) else (b, 0.0)
        return Dual(where(cond, av, bv), where(cond, ad, bd))
    return np.where(cond, a, b)


def const_floor(x):
    """Floor of the primal value, treated as a constant (zero tangent).

    Used for periodic wrapping: ``x - P * const_floor(x / P)`` has
    derivative 1 almost everywhere, which is the correct jet for a
    P-periodic chart.
    """
    return np.floor(value_deep(value(x)))
