"""Norms, dual exponents, box constraints and exact linear-over-box oracles.

Everything in here is a pure function of its inputs; the rest of the
library builds its step rules on top of these primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class EmptyIntersectionError(ValueError):
    """Raised when two axis-aligned boxes have an empty intersection."""


@dataclass(frozen=True)
class PNorm:
    """Exponent of an l^p norm on R^d.

    The limit cases p=1 and p=infinity are held exactly (``math.inf`` for
    the latter) and dispatch to structurally different formulas; they are
    never approximated by a large finite exponent.
    """

    p: float

    def __post_init__(self):
        if not self.p >= 1.0:
            raise ValueError(f"norm exponent must satisfy p >= 1, got {self.p}")

    @property
    def is_inf(self) -> bool:
        return math.isinf(self.p)

    @property
    def is_one(self) -> bool:
        return self.p == 1.0

    def dual(self) -> "PNorm":
        """The exponent q with 1/p + 1/q = 1 (q=inf for p=1, q=1 for p=inf)."""
        if self.is_inf:
            return PNorm(1.0)
        if self.is_one:
            return PNorm(math.inf)
        return PNorm(self.p / (self.p - 1.0))

    def __repr__(self):
        return f"PNorm(inf)" if self.is_inf else f"PNorm({self.p:g})"


L1 = PNorm(1.0)
L2 = PNorm(2.0)
LINF = PNorm(math.inf)


def norm(x, p: PNorm) -> float:
    """l^p norm of a vector."""
    x = np.asarray(x, dtype=float)
    if p.is_inf:
        return float(np.max(np.abs(x))) if x.size else 0.0
    if p.is_one:
        return float(np.sum(np.abs(x)))
    return float(np.sum(np.abs(x) ** p.p) ** (1.0 / p.p))


def dual_exponent(p: PNorm) -> PNorm:
    return p.dual()


def dual_argmax(xi, p: PNorm) -> np.ndarray:
    """A maximizer of <xi, v> over the unit l^p ball.

    Returns v with ||v||_p <= 1 and <xi, v> = ||xi||_q (q the dual
    exponent).  Conventions at the limit exponents:

    * p=inf: the componentwise sign, with sign(0)=0.  The result may have
      ||v||_inf < 1 but remains a maximizer.
    * p=1: mass 1/#{max-magnitude coords} on each coordinate attaining
      ||xi||_inf, signed; 0 elsewhere.
    * 1<p<inf: sign(xi) * (|xi| / ||xi||_q)^(q-1) componentwise.

    For xi = 0 every point of the ball is a maximizer and 0 is returned.
    """
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        return np.zeros_like(xi)
    if p.is_inf:
        return np.sign(xi)
    if p.is_one:
        mag = np.abs(xi)
        top = mag == mag.max()
        v = np.zeros_like(xi)
        v[top] = np.sign(xi[top]) / top.sum()
        return v
    q = p.dual().p
    nq = norm(xi, p.dual())
    return np.sign(xi) * (np.abs(xi) / nq) ** (q - 1.0)


@dataclass(frozen=True)
class IntervalBox:
    """Axis-aligned box given by per-coordinate closed intervals."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape:
            raise ValueError("interval bounds must share a shape")
        if np.any(lo > hi):
            raise EmptyIntersectionError("lower bound exceeds upper bound")

    @classmethod
    def ball(cls, center, radius: float) -> "IntervalBox":
        c = np.asarray(center, dtype=float)
        return cls(c - radius, c + radius)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def corners(self) -> np.ndarray:
        """All 2^d corner points; only sensible for small d."""
        d = self.dim
        grid = np.array(np.meshgrid(*[[0, 1]] * d, indexing="ij")).reshape(d, -1).T
        return np.where(grid == 0, self.lower, self.upper)


@dataclass(frozen=True)
class BoxConstraint:
    """Closed l-infinity ball: |x_i - center_i| <= radius componentwise."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius < 0:
            raise ValueError("box radius must be nonnegative")

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.radius

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.radius

    def interval(self) -> IntervalBox:
        return IntervalBox(self.lower, self.upper)

    def contains(self, x, tol: float = 0.0) -> bool:
        # checked against the face values fl(c +/- r): points produced by
        # clipping onto a face are members even when |x - c| rounds a hair
        # above the radius
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.clip(x, self.lower, self.upper)
        # the face values fl(c +/- r) can round a hair outside the radius;
        # nudge offending coordinates one ulp toward the center so that
        # |y_i - c_i| <= radius holds under exact comparison
        over = np.abs(y - self.center) > self.radius
        while np.any(over):
            y = np.where(over, np.nextafter(y, self.center), y)
            over = np.abs(y - self.center) > self.radius
        return y


def clip(x, box) -> np.ndarray:
    """Componentwise clamp of x into a box; idempotent, identity on members."""
    return box.clip(np.asarray(x, dtype=float))


def linear_min_over_box(xi, box) -> tuple[np.ndarray, float]:
    """Exact minimizer and minimum of x -> <xi, x> over an axis box.

    Corner selection: xi_i > 0 takes the lower face, xi_i < 0 the upper
    face; for xi_i = 0 the coordinate is flat and the interval midpoint is
    taken (deterministic tie-break).
    """
    xi = np.asarray(xi, dtype=float)
    lo, hi = np.asarray(box.lower, float), np.asarray(box.upper, float)
    x = np.where(xi > 0, lo, np.where(xi < 0, hi, 0.5 * (lo + hi)))
    return x, float(xi @ x)


def box_intersect(a, b) -> IntervalBox:
    """Componentwise interval intersection of two axis boxes.

    Raises EmptyIntersectionError if some coordinate interval is empty.
    """
    lo = np.maximum(np.asarray(a.lower, float), np.asarray(b.lower, float))
    hi = np.minimum(np.asarray(a.upper, float), np.asarray(b.upper, float))
    if np.any(lo > hi):
        raise EmptyIntersectionError("boxes are disjoint")
    return IntervalBox(lo, hi)
