"""Discrete flows: signed-gradient attacks, the normalized-gradient family,
semi-implicit and fully implicit ball-constrained stepping, variational
interpolation and dissipation diagnostics.

Every scheme moves at most tau per step in the space norm; the implicit
scheme delegates its inner argmin to the consensus particle solver.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import cbo
from .energy import Energy, _step_region, slope
from .geometry import BoxConstraint, PNorm, clip, dual_argmax, norm


@dataclass
class Trajectory:
    x0: np.ndarray
    tau: float
    points: np.ndarray  # (steps + 1, d)
    space: PNorm

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.points = np.asarray(self.points, dtype=float)

    @property
    def steps(self) -> int:
        return self.points.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.points.shape[0])

    def step_at(self, t: float) -> np.ndarray:
        """Piecewise-constant interpolation x(t) = x^k for t in ((k-1)tau, k tau]."""
        if t <= 0:
            return self.points[0]
        k = int(np.ceil(t / self.tau - 1e-12))
        return self.points[min(k, self.steps)]

    def affine_at(self, t: float) -> np.ndarray:
        """Piecewise-affine interpolation between the iterates."""
        s = np.clip(t / self.tau, 0.0, self.steps)
        k = int(np.floor(s))
        if k >= self.steps:
            return self.points[-1]
        frac = s - k
        return (1 - frac) * self.points[k] + frac * self.points[k + 1]

    def displacements(self) -> np.ndarray:
        return np.array(
            [norm(b - a, self.space) for a, b in zip(self.points[:-1], self.points[1:])]
        )


@dataclass
class FlowDiagnostics:
    energies: np.ndarray  # E(x^k), length steps + 1
    slopes: np.ndarray  # |dE|(x^k), length steps + 1
    metric_derivatives: np.ndarray  # ||x^k - x^{k-1}|| / tau, length steps
    step_residuals: np.ndarray  # E(x^{k+1}) - E(x^k) + tau * |dE|(x^k), length steps
    cumulative_residuals: np.ndarray  # E(x^k) - E(x^0) + tau * sum_{j<k} |dE|(x^j)


# ---------------------------------------------------------------------------
# explicit schemes


def fgsm_step(gradient, x0, eps: float) -> np.ndarray:
    """One signed step of size eps along the loss gradient."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return np.asarray(x0, dtype=float) + eps * np.sign(np.asarray(gradient, dtype=float))


def ifgsm(
    loss_grad: Callable[[np.ndarray], np.ndarray],
    x0,
    eps: float,
    tau: float,
    steps: int,
) -> Trajectory:
    """Iterated signed ascent on the loss with exact l-infinity budget clipping.

    x^{k+1} = clip(x^k + tau * sign(loss_grad(x^k)), budget box), so every
    iterate satisfies ||x^k - x0||_inf <= eps exactly.
    """
    if eps <= 0 or tau <= 0:
        raise ValueError("eps and tau must be positive")
    x0 = np.asarray(x0, dtype=float)
    box = BoxConstraint(x0, eps)
    points = [x0]
    x = x0
    for _ in range(steps):
        x = clip(x + tau * np.sign(np.asarray(loss_grad(x), dtype=float)), box)
        points.append(x)
    return Trajectory(x0, tau, np.stack(points), PNorm(float("inf")))


def ngd_step(E: Energy, x, tau: float, p: PNorm | None = None) -> np.ndarray:
    """Normalized/signed gradient descent step: x - tau * dual_argmax(grad, p)."""
    p = p or E.space
    x = np.asarray(x, dtype=float)
    return x - tau * dual_argmax(E.gradient(x), p)


def semi_implicit_minmove(E: Energy, x0, tau: float, steps: int, **_ignored) -> Trajectory:
    """Steps of the energy with its smooth part frozen at the current iterate.

    Each step minimizes the semi-linearization over the tau-ball (and the
    indicator box when present).  The minimizer is closed form: the
    normalized-gradient step without an indicator, the clipped signed
    step with an l-infinity box.  A box in a non-l-infinity space is
    supported only in dimension one, where the ball is an interval.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    x0 = np.asarray(x0, dtype=float)
    if E.box is not None and not (E.space.is_inf or x0.size == 1):
        raise ValueError("box indicator requires the l-infinity space norm (or d=1)")
    points = [x0]
    x = x0
    for _ in range(steps):
        x = x - tau * dual_argmax(E.gradient(x), E.space)
        if E.box is not None:
            x = clip(x, E.box)
        points.append(x)
    return Trajectory(x0, tau, np.stack(points), E.space)


# ---------------------------------------------------------------------------
# implicit scheme and interpolation


def _ball_argmin(E: Energy, x: np.ndarray, radius: float, config: cbo.CboConfig) -> np.ndarray:
    """Approximate argmin of E over the radius-ball around x (plus box),
    never worse than staying at x."""
    region = _step_region(E, x, radius)
    best, value = cbo.solve(E.smooth_batch, region, config)
    return best if value <= E.smooth(x) else x


def minimizing_movement(
    E: Energy, x0, tau: float, steps: int, config: cbo.CboConfig | None = None
) -> Trajectory:
    """Fully implicit stepping: each iterate minimizes E over the tau-ball
    around its predecessor, intersected with the indicator box.

    The inner argmin is solved by the consensus particle method with a
    per-step derived seed, so a trajectory is deterministic given the
    config.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    x0 = np.asarray(x0, dtype=float)
    if not E.in_domain(x0):
        raise ValueError("x0 lies outside the energy's domain")
    config = config or cbo.CboConfig()
    points = [x0]
    x = x0
    for k in range(steps):
        x = _ball_argmin(E, x, tau, config.with_seed(config.seed + 7919 * (k + 1)))
        points.append(x)
    return Trajectory(x0, tau, np.stack(points), E.space)


def de_giorgi_interpolate(
    E: Energy, traj: Trajectory, t: float, config: cbo.CboConfig | None = None
) -> np.ndarray:
    """Variational interpolation: the ball-constrained argmin at radius
    t - t^{k-1} around x^{k-1} for t inside the k-th interval."""
    horizon = traj.steps * traj.tau
    if t < 0 or t > horizon + 1e-12:
        raise ValueError(f"t={t} outside [0, {horizon}]")
    if t <= 0:
        return traj.points[0]
    config = config or cbo.CboConfig()
    k = int(np.ceil(t / traj.tau - 1e-12))
    radius = t - (k - 1) * traj.tau
    anchor = traj.points[k - 1]
    if radius <= 0:
        return anchor
    return _ball_argmin(E, anchor, radius, config.with_seed(config.seed + 104729 * k))


# ---------------------------------------------------------------------------
# diagnostics


def diagnostics(E: Energy, traj: Trajectory) -> FlowDiagnostics:
    """Energy, slope, per-interval speed and dissipation residuals along a
    trajectory."""
    energies = np.array([E(x) for x in traj.points])
    slopes = np.array([slope(E, x) for x in traj.points])
    speeds = traj.displacements() / traj.tau
    step_res = energies[1:] - energies[:-1] + traj.tau * slopes[:-1]
    cumulative = energies - energies[0] + traj.tau * np.concatenate(
        [[0.0], np.cumsum(slopes[:-1])]
    )
    return FlowDiagnostics(energies, slopes, speeds, step_res, cumulative)


def estimate_gradient_lipschitz(
    E: Energy, points: np.ndarray, jitter: float = 0.0, seed: int = 0, samples: int = 0
) -> float:
    """Empirical Lipschitz constant of the smooth gradient along a point
    sequence, measured as ||grad(a) - grad(b)||_dual / ||a - b||_space.

    Consecutive pairs (and their midpoints) are always used; ``samples``
    adds random pairs at scale ``jitter`` around the sequence.
    """
    points = np.asarray(points, dtype=float)
    pairs = []
    for a, b in zip(points[:-1], points[1:]):
        pairs.append((a, b))
        pairs.append((a, 0.5 * (a + b)))
        pairs.append((0.5 * (a + b), b))
    if samples and jitter > 0:
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            base = points[rng.integers(len(points))]
            pairs.append((base, base + rng.uniform(-jitter, jitter, size=base.shape)))
    dual = E.space.dual()
    best = 0.0
    for a, b in pairs:
        dx = norm(b - a, E.space)
        if dx == 0:
            continue
        dg = norm(E.gradient(b) - E.gradient(a), dual)
        best = max(best, dg / dx)
    return best


def error_study(a: Trajectory, b: Trajectory) -> float:
    """Maximal l-infinity distance between two trajectories over all steps."""
    if a.points.shape != b.points.shape:
        raise ValueError("trajectories must share length and dimension")
    return float(np.max(np.abs(a.points - b.points)))


def averaged_max_distance(pairs: list[tuple[Trajectory, Trajectory]]) -> float:
    """Mean over samples of the per-sample maximal trajectory distance."""
    return float(np.mean([error_study(a, b) for a, b in pairs]))


def write_trajectory_csv(path, traj: Trajectory, diag: FlowDiagnostics | None = None):
    """Tidy export: k, t, coordinates, then diagnostics columns if given."""
    d = traj.points.shape[1]
    header = ["k", "t"] + [f"x_{i + 1}" for i in range(d)]
    if diag is not None:
        header += ["energy", "slope", "metric_derivative"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k, (t, x) in enumerate(zip(traj.times, traj.points)):
            row = [k, repr(float(t))] + [repr(float(c)) for c in x]
            if diag is not None:
                speed = diag.metric_derivatives[k - 1] if k >= 1 else 0.0
                row += [repr(float(diag.energies[k])), repr(float(diag.slopes[k])), repr(float(speed))]
            writer.writerow(row)
