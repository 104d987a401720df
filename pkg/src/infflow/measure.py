"""Equal-weight particle clouds: bottleneck transport distance, potential
energies, pushforward flows and the robust-optimization exchange check.

Clouds with n points of weight 1/n make the sup-cost transport distance a
bottleneck assignment problem, solved exactly by binary search over the
distance multiset with bipartite-matching feasibility.  Labels, when
present, freeze the label marginals: mismatched pairs carry infinite cost.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from . import cbo
from .energy import Energy, slope
from .geometry import BoxConstraint, IntervalBox, PNorm, norm
from .schemes import Trajectory, ifgsm, minimizing_movement, semi_implicit_minmove


class InfeasibleMatchingError(ValueError):
    """Label histograms differ: every pairing has infinite cost."""


class InfiniteEnergyError(ValueError):
    """A particle lies outside the energy's indicator box."""


@dataclass
class ParticleCloud:
    points: np.ndarray  # (n, d), each of weight 1/n
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] < 1:
            raise ValueError("a cloud needs at least one particle")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape[0] != self.points.shape[0]:
                raise ValueError("labels must align with points")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> "ParticleCloud":
        labels = None if self.labels is None else self.labels.copy()
        return ParticleCloud(points, labels)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            d = self.points.shape[1]
            writer.writerow(["particle"] + [f"x_{i + 1}" for i in range(d)] + ["label"])
            for i, p in enumerate(self.points):
                label = "" if self.labels is None else self.labels[i]
                writer.writerow([i] + [repr(float(c)) for c in p] + [label])

    @classmethod
    def from_csv(cls, path) -> "ParticleCloud":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        coords = sorted(k for k in rows[0] if k.startswith("x_"))
        points = np.array([[float(r[k]) for k in coords] for r in rows])
        raw = [r.get("label", "") for r in rows]
        labels = None if all(v == "" for v in raw) else np.array([float(v) for v in raw])
        return cls(points, labels)


@dataclass(frozen=True)
class BottleneckPlan:
    permutation: np.ndarray  # target index matched to each source index
    value: float  # max matched distance


def _has_perfect_matching(adjacency: np.ndarray) -> np.ndarray | None:
    graph = csr_matrix(adjacency)
    match = maximum_bipartite_matching(graph, perm_type="column")
    return match if np.all(match >= 0) else None


def w_infty(a: ParticleCloud, b: ParticleCloud, p: PNorm) -> tuple[float, BottleneckPlan]:
    """Bottleneck transport distance between equal-size equal-weight clouds.

    Minimum over permutations of the maximum pairwise l^p distance.
    With labels present on both clouds, only label-preserving pairings
    are admissible; differing label histograms raise
    InfeasibleMatchingError.
    """
    if a.size != b.size:
        raise ValueError("clouds must have equal size")
    if (a.labels is None) != (b.labels is None):
        raise ValueError("labels must be present on both clouds or neither")
    n = a.size
    dist = np.array([[norm(x - z, p) for z in b.points] for x in a.points])
    allowed = np.ones((n, n), dtype=bool)
    if a.labels is not None:
        if Counter(a.labels.tolist()) != Counter(b.labels.tolist()):
            raise InfeasibleMatchingError("label histograms differ")
        allowed = a.labels[:, None] == b.labels[None, :]
    candidates = np.unique(dist[allowed])
    lo, hi = 0, len(candidates) - 1
    best_match = None
    while lo <= hi:
        mid = (lo + hi) // 2
        match = _has_perfect_matching(allowed & (dist <= candidates[mid]))
        if match is not None:
            best_match, hi = match, mid - 1
        else:
            lo = mid + 1
    if best_match is None:
        raise InfeasibleMatchingError("no admissible pairing exists")
    value = float(candidates[lo])
    # recompute the matching at the optimal threshold
    match = _has_perfect_matching(allowed & (dist <= value))
    return value, BottleneckPlan(np.asarray(match), value)


def potential_energy(cloud: ParticleCloud, E: Energy) -> float:
    """Mean of E over the particles; infinite values are an error."""
    values = [E(x) for x in cloud.points]
    if not np.all(np.isfinite(values)):
        raise InfiniteEnergyError("a particle lies outside the energy's domain")
    return float(np.mean(values))


def cloud_slope(cloud: ParticleCloud, E: Energy) -> float:
    """Mean pointwise slope over the particles."""
    return float(np.mean([slope(E, x) for x in cloud.points]))


def pushforward_flow(
    cloud: ParticleCloud,
    E: Energy,
    scheme: str,
    tau: float,
    steps: int,
    config: cbo.CboConfig | None = None,
    budget: float | None = None,
) -> list[ParticleCloud]:
    """Flow each particle independently under the chosen scheme.

    ``scheme`` is one of ``minmove``, ``semi-implicit`` or ``ifgsm``.
    With ``budget`` given, each particle carries its own budget box
    around its starting point (required for ifgsm); otherwise the
    energy's indicator, if any, is shared.  Labels are never modified.
    Returns the cloud at every time step, the initial cloud included.
    """
    if scheme not in ("minmove", "semi-implicit", "ifgsm"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme == "ifgsm" and budget is None:
        raise ValueError("ifgsm requires a budget")
    config = config or cbo.CboConfig()
    trajectories = []
    for i, x in enumerate(cloud.points):
        if budget is not None:
            Ei = replace(E, box=BoxConstraint(x.copy(), budget))
        else:
            Ei = E
        try:
            if scheme == "ifgsm":
                traj = ifgsm(lambda z: -Ei.gradient(z), x, budget, tau, steps)
            elif scheme == "semi-implicit":
                traj = semi_implicit_minmove(Ei, x, tau, steps)
            else:
                traj = minimizing_movement(
                    Ei, x, tau, steps, config.with_seed(config.seed + 65537 * i)
                )
        except Exception as exc:
            raise RuntimeError(f"particle {i}: {exc}") from exc
        trajectories.append(traj)
    clouds = []
    for k in range(steps + 1):
        clouds.append(cloud.with_points(np.stack([t.points[k] for t in trajectories])))
    return clouds


def pushforward_step_discrete(
    cloud: ParticleCloud,
    values: np.ndarray,
    candidates: np.ndarray,
    tau: float,
    p: PNorm,
) -> ParticleCloud:
    """One implicit step with moves restricted to a finite candidate set.

    Each particle moves to the lowest-value candidate within distance tau
    (tie-break: lowest candidate index).  A desk-scale realization of the
    pointwise-argmin pushforward on grid energies.
    """
    candidates = np.asarray(candidates, dtype=float)
    values = np.asarray(values, dtype=float)
    moved = []
    for i, x in enumerate(cloud.points):
        dists = np.array([norm(c - x, p) for c in candidates])
        feasible = np.flatnonzero(dists <= tau)
        if feasible.size == 0:
            raise RuntimeError(f"particle {i}: no candidate within distance {tau}")
        moved.append(candidates[feasible[np.argmin(values[feasible])]])
    return cloud.with_points(np.stack(moved))


def dro_check(
    cloud: ParticleCloud,
    loss_batch: Callable[[np.ndarray], np.ndarray],
    eps: float,
    config: cbo.CboConfig | None = None,
) -> tuple[float, float, float]:
    """Compare the mean of per-particle constrained maxima of the loss with
    the potential of the pushforward cloud under independent solver runs.

    lhs: mean over particles of max of the loss over the eps-box around
    the particle.  rhs: the loss potential of the cloud obtained by
    moving each particle to its per-particle maximizer (fresh solver
    seeds).  Returns (lhs, rhs, |lhs - rhs|).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    config = config or cbo.CboConfig()
    neg = lambda pts: -np.asarray(loss_batch(pts), dtype=float)
    lhs_vals, pushed = [], []
    for i, x in enumerate(cloud.points):
        box = IntervalBox.ball(x, eps)
        _, v = cbo.solve(neg, box, config.with_seed(config.seed + 3 * i))
        lhs_vals.append(max(-v, float(loss_batch(x[None, :])[0])))
        point, _ = cbo.solve(neg, box, config.with_seed(config.seed + 3 * i + 500009))
        pushed.append(point)
    lhs = float(np.mean(lhs_vals))
    rhs = float(np.mean(loss_batch(np.stack(pushed))))
    return lhs, rhs, abs(lhs - rhs)


def flow_summary(clouds: list[ParticleCloud], E: Energy, p: PNorm) -> list[dict]:
    """Per-step transport distance to the start, potential energy and slope."""
    initial = clouds[0]
    rows = []
    for k, c in enumerate(clouds):
        dist, _ = w_infty(initial, c, p)
        rows.append(
            {
                "step": k,
                "w_infty_to_start": dist,
                "potential_energy": potential_energy(c, E),
                "cloud_slope": cloud_slope(c, E),
            }
        )
    return rows
