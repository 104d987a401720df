"""Energies of the form E = smooth part + optional l-infinity box indicator.

Provides evaluation, semi-linearization around an anchor, the local slope
(the minimal dual norm over the subdifferential) and the ball-constrained
infimal convolution e_tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import cbo
from .geometry import LINF, BoxConstraint, IntervalBox, PNorm, box_intersect, norm


class UndefinedSlopeError(ValueError):
    """Slope with an active box indicator is only available in l-infinity space."""


@dataclass
class Energy:
    """Smooth evaluator plus an optional box indicator.

    ``value``/``grad`` evaluate the smooth part at a single point.  If
    ``batch_value`` is given it must map an (N, d) array to (N,) smooth
    values; otherwise batches fall back to a Python loop.  Evaluating the
    full energy outside the indicator box returns +inf.
    """

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    box: Optional[BoxConstraint] = None
    space: PNorm = LINF
    batch_value: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def smooth(self, x) -> float:
        return float(self.value(np.asarray(x, dtype=float)))

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self.grad(np.asarray(x, dtype=float)), dtype=float)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.box is not None and not self.box.contains(x):
            return math.inf
        return self.smooth(x)

    def smooth_batch(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.batch_value is not None:
            return np.asarray(self.batch_value(points), dtype=float)
        return np.array([self.smooth(p) for p in points], dtype=float)

    def in_domain(self, x, tol: float = 0.0) -> bool:
        return self.box is None or self.box.contains(x, tol=tol)

    def semi_linearize(self, z) -> "SemiLinearization":
        z = np.asarray(z, dtype=float)
        return SemiLinearization(
            anchor=z,
            anchor_value=self.smooth(z),
            anchor_gradient=self.gradient(z),
            box=self.box,
            space=self.space,
        )


@dataclass
class SemiLinearization:
    """The smooth part replaced by its first-order expansion at an anchor."""

    anchor: np.ndarray
    anchor_value: float
    anchor_gradient: np.ndarray
    box: Optional[BoxConstraint] = None
    space: PNorm = LINF

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.box is not None and not self.box.contains(x):
            return math.inf
        return self.anchor_value + float(self.anchor_gradient @ (x - self.anchor))

    def energy(self) -> Energy:
        """The linearization repackaged as an Energy with constant gradient."""
        g = self.anchor_gradient
        z, fz = self.anchor, self.anchor_value

        def val(x):
            return fz + float(g @ (x - z))

        return Energy(
            value=val,
            grad=lambda x: g.copy(),
            box=self.box,
            space=self.space,
            batch_value=lambda pts: fz + (pts - z) @ g,
        )


def semi_linearize(E: Energy, z) -> SemiLinearization:
    return E.semi_linearize(z)


# Active-face detection rides on this relative tolerance; flows sit on the
# boundary and exact equality is unreliable in floating point.
_FACE_TOL = 1e-9


def slope(E: Energy, x) -> float:
    """Local slope |dE|(x): the minimal dual norm over the subdifferential.

    Without an indicator this is the dual norm of the smooth gradient.
    With an l-infinity box in l-infinity space the minimum over the
    normal cone splits componentwise: an active upper face can absorb any
    negative gradient component, an active lower face any positive one.
    """
    x = np.asarray(x, dtype=float)
    if not E.in_domain(x, tol=_FACE_TOL * max(1.0, E.box.radius if E.box else 1.0)):
        raise ValueError("slope requested outside the energy's domain")
    g = E.gradient(x)
    if E.box is None:
        return norm(g, E.space.dual())
    tol = _FACE_TOL * max(1.0, E.box.radius)
    lo, hi = E.box.lower, E.box.upper
    at_lo = x <= lo + tol
    at_hi = x >= hi - tol
    if not (np.any(at_lo) or np.any(at_hi)):
        return norm(g, E.space.dual())
    if not E.space.is_inf:
        raise UndefinedSlopeError(
            "slope with an active box indicator is only defined for the l-infinity space norm"
        )
    contrib = np.abs(g)
    contrib = np.where(at_hi & ~at_lo, np.maximum(g, 0.0), contrib)
    contrib = np.where(at_lo & ~at_hi, np.maximum(-g, 0.0), contrib)
    contrib = np.where(at_lo & at_hi, 0.0, contrib)  # degenerate zero-width interval
    return float(contrib.sum())


def _step_region(E: Energy, x: np.ndarray, radius: float) -> IntervalBox:
    """Feasible region B_radius(x) in the space norm intersected with the box.

    Only regions that are axis boxes are supported: l-infinity space, or
    dimension one where every p-ball is an interval.
    """
    x = np.asarray(x, dtype=float)
    if not (E.space.is_inf or x.size == 1):
        raise ValueError("step regions are axis boxes only for the l-infinity space norm (or d=1)")
    ball = IntervalBox.ball(x, radius)
    if E.box is None:
        return ball
    return box_intersect(ball, E.box.interval())


def e_tau(E: Energy, x, tau: float, config: cbo.CboConfig | None = None) -> float:
    """min of E over the closed tau-ball around x (plus the indicator).

    Solved by the consensus particle method; x itself is feasible, so the
    returned value never exceeds E(x).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    x = np.asarray(x, dtype=float)
    region = _step_region(E, x, tau)
    _, best = cbo.solve(E.smooth_batch, region, config)
    return min(best, E(x))


def e_tau_grid(E: Energy, x, tau: float, resolution: int = 200) -> float:
    """Dense-grid oracle for e_tau in dimension 1 or 2.

    Independent of the particle solver; intended for tests and
    diagnostics, not production stepping.
    """
    x = np.asarray(x, dtype=float)
    region = _step_region(E, x, tau)
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(region.lower, region.upper)]
    if x.size == 1:
        pts = axes[0][:, None]
    elif x.size == 2:
        xx, yy = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    else:
        raise ValueError("grid oracle supports d <= 2 only")
    values = E.smooth_batch(pts)
    return float(min(values.min(), E(x)))
