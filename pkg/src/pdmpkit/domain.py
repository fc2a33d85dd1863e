"""Compact, positively invariant state spaces.

Supported charts: axis-aligned boxes, the unit box, the flat torus
``[0,1)^d`` with periodic wrapping, an annulus handled in polar
coordinates ``(theta, r)``, and the quadrant band
``{(x, y): x, y >= 0, eta <= x + y <= 1/eta}`` used by the competitive
population model.

The annulus is *stored and sampled* in polar coordinates — the chart the
annulus vector fields use — while :meth:`CompactDomain.contains` takes
Cartesian input by default for that kind (pass ``chart="polar"`` to test
polar points directly).  Conversions are exposed so each model pipeline
can stay in a single chart.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

__all__ = ["CompactDomain", "DomainError", "polar_to_cartesian", "cartesian_to_polar"]

TWO_PI = 2.0 * math.pi


class DomainError(ValueError):
    """Invalid domain parameters or point/domain mismatch."""


def polar_to_cartesian(p):
    theta, r = p[0], p[1]
    return np.array([r * np.cos(theta), r * np.sin(theta)], dtype=float)


def cartesian_to_polar(p):
    x, y = p[0], p[1]
    return np.array([math.atan2(y, x) % TWO_PI, math.hypot(x, y)], dtype=float)


@dataclass(frozen=True)
class CompactDomain:
    """A compact subset of R^d with membership, wrapping and sampling."""

    kind: str
    dimension: int
    params: tuple

    # construction ----------------------------------------------------

    @staticmethod
    def box(lower: Sequence[float], upper: Sequence[float]) -> "CompactDomain":
        lower = tuple(float(v) for v in lower)
        upper = tuple(float(v) for v in upper)
        if len(lower) != len(upper):
            raise DomainError("lower/upper length mismatch")
        if not all(lo < up for lo, up in zip(lower, upper)):
            raise DomainError("box needs lower < upper coordinatewise")
        return CompactDomain("box", len(lower), (lower, upper))

    @staticmethod
    def unit_box(dimension: int) -> "CompactDomain":
        return CompactDomain("unit_box", int(dimension), ())

    @staticmethod
    def torus(dimension: int) -> "CompactDomain":
        return CompactDomain("torus", int(dimension), ())

    @staticmethod
    def annulus(r_min: float, r_max: float) -> "CompactDomain":
        if not 0.0 < r_min < r_max:
            raise DomainError("annulus needs 0 < r_min < r_max")
        return CompactDomain("annulus", 2, (float(r_min), float(r_max)))

    @staticmethod
    def quadrant_band(eta: float) -> "CompactDomain":
        if not 0.0 < eta < 1.0:
            raise DomainError("quadrant band needs 0 < eta < 1")
        return CompactDomain("quadrant_band", 2, (float(eta),))

    # basic geometry ----------------------------------------------------

    def _check_dim(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise DomainError(f"expected a point of dimension {self.dimension}, got shape {x.shape}")
        return x

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis bounds in the working chart (polar for the annulus)."""
        if self.kind == "box":
            lower, upper = self.params
            return np.array(lower), np.array(upper)
        if self.kind in ("unit_box", "torus"):
            return np.zeros(self.dimension), np.ones(self.dimension)
        if self.kind == "annulus":
            r_min, r_max = self.params
            return np.array([0.0, r_min]), np.array([TWO_PI, r_max])
        eta = self.params[0]
        return np.zeros(2), np.full(2, 1.0 / eta)

    def diameter(self) -> float:
        if self.kind == "torus":
            return 0.5 * math.sqrt(self.dimension)
        if self.kind == "annulus":
            return 2.0 * self.params[1]
        lo, up = self.bounding_box()
        return float(np.linalg.norm(up - lo))

    def contains(self, x, chart: str | None = None, tol: float = 0.0) -> bool:
        """Membership test.  For the annulus ``x`` is Cartesian unless
        ``chart="polar"`` is given; other kinds ignore ``chart``."""
        x = self._check_dim(x)
        if not np.all(np.isfinite(x)):
            return False
        if self.kind == "torus":
            return True
        if self.kind == "annulus":
            r_min, r_max = self.params
            r = float(x[1]) if chart == "polar" else float(np.hypot(x[0], x[1]))
            return r_min - tol <= r <= r_max + tol
        if self.kind == "quadrant_band":
            eta = self.params[0]
            s = float(x[0] + x[1])
            return x[0] >= -tol and x[1] >= -tol and eta - tol <= s <= 1.0 / eta + tol
        lo, up = self.bounding_box()
        return bool(np.all(x >= lo - tol) and np.all(x <= up + tol))

    def wrap(self, x) -> np.ndarray:
        """Reduce torus coordinates modulo 1; identity for other kinds."""
        x = self._check_dim(x)
        if self.kind == "torus":
            return np.mod(x, 1.0)
        return x

    def project(self, x) -> np.ndarray:
        """Map an arbitrary finite point into M (working chart)."""
        x = self._check_dim(x)
        if self.kind == "torus":
            return np.mod(x, 1.0)
        if self.kind == "annulus":
            r_min, r_max = self.params
            return np.array([x[0], min(max(x[1], r_min), r_max)])
        if self.kind == "quadrant_band":
            eta = self.params[0]
            p = np.maximum(x, 0.0)
            s = p[0] + p[1]
            if s < eta:
                p = np.full(2, eta / 2.0) if s <= 0.0 else p * (eta / s)
            elif s > 1.0 / eta:
                p = p / (s * eta)
            return p
        lo, up = self.bounding_box()
        return np.clip(x, lo, up)

    def excursion(self, x) -> float:
        """How far outside M the point sits (0 inside; working chart)."""
        x = self._check_dim(x)
        if self.kind == "torus":
            return 0.0
        if self.kind == "annulus":
            r_min, r_max = self.params
            return max(r_min - x[1], x[1] - r_max, 0.0)
        if self.kind == "quadrant_band":
            eta = self.params[0]
            s = x[0] + x[1]
            return max(-x[0], -x[1], eta - s, s - 1.0 / eta, 0.0)
        lo, up = self.bounding_box()
        return float(max(np.max(lo - x), np.max(x - up), 0.0))

    def distance(self, p, q) -> float:
        """Chart-aware distance: wrapped on the torus, embedded for the
        annulus (polar inputs), Euclidean otherwise."""
        p = self._check_dim(p)
        q = self._check_dim(q)
        if self.kind == "torus":
            d = np.abs(np.mod(p, 1.0) - np.mod(q, 1.0))
            d = np.minimum(d, 1.0 - d)
            return float(np.linalg.norm(d))
        if self.kind == "annulus":
            return float(np.linalg.norm(polar_to_cartesian(p) - polar_to_cartesian(q)))
        return float(np.linalg.norm(p - q))

    # sampling ----------------------------------------------------------

    def _axes(self, resolution) -> list[np.ndarray]:
        if np.isscalar(resolution):
            resolution = (int(resolution),) * self.dimension
        if len(resolution) != self.dimension or any(r < 2 for r in resolution):
            raise DomainError("resolution must give >= 2 points per axis")
        lo, up = self.bounding_box()
        axes = []
        for k, n in enumerate(resolution):
            periodic = self.kind == "torus" or (self.kind == "annulus" and k == 0)
            if periodic:
                axes.append(lo[k] + (up[k] - lo[k]) * np.arange(n) / n)
            else:
                axes.append(np.linspace(lo[k], up[k], n))
        return axes

    def sample_grid(self, resolution) -> np.ndarray:
        """Deterministic lattice inside M, shape (n_points, d).

        Annulus lattices are laid out in the polar chart (theta
        periodic, r inclusive of both radii); quadrant-band lattices are
        bounding-box lattices filtered by membership.
        """
        axes = self._axes(resolution)
        pts = np.array([p for p in product(*axes)], dtype=float)
        if self.kind == "quadrant_band":
            pts = np.array([p for p in pts if self.contains(p)], dtype=float)
        return pts

    def sample_uniform(self, rng_seed) -> np.ndarray:
        """One pseudo-uniform point of M, deterministic given the seed.

        Accepts an integer seed or an existing ``numpy.random.Generator``.
        Annulus samples are uniform in the polar chart; the quadrant band
        uses rejection from its bounding box.
        """
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        lo, up = self.bounding_box()
        if self.kind == "quadrant_band":
            while True:
                p = lo + (up - lo) * rng.random(2)
                if self.contains(p):
                    return p
        return lo + (up - lo) * rng.random(self.dimension)

    # serialization ------------------------------------------------------

    def to_json(self) -> dict:
        if self.kind == "box":
            params = {"lower": list(self.params[0]), "upper": list(self.params[1])}
        elif self.kind == "annulus":
            params = {"r_min": self.params[0], "r_max": self.params[1]}
        elif self.kind == "quadrant_band":
            params = {"eta": self.params[0]}
        else:
            params = {}
        return {"kind": self.kind, "dimension": self.dimension, "params": params}

    @staticmethod
    def from_json(obj) -> "CompactDomain":
        if isinstance(obj, str):
            obj = json.loads(obj)
        kind = obj["kind"]
        params = obj.get("params", {})
        if kind == "box":
            return CompactDomain.box(params["lower"], params["upper"])
        if kind == "unit_box":
            return CompactDomain.unit_box(obj["dimension"])
        if kind == "torus":
            return CompactDomain.torus(obj["dimension"])
        if kind == "annulus":
            return CompactDomain.annulus(params["r_min"], params["r_max"])
        if kind == "quadrant_band":
            return CompactDomain.quadrant_band(params["eta"])
        raise DomainError(f"unknown domain kind {kind!r}")
