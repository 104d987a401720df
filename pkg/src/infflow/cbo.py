"""Consensus-based particle solver for box-constrained nonconvex argmin problems.

Used as the inner solver of the implicit stepping schemes: each step asks
for a minimizer of the energy over the intersection of the step ball and
the budget box, which is explored by a particle ensemble instead of a
gradient method to avoid getting stuck in local minima.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import IntervalBox


class NonFiniteObjectiveError(RuntimeError):
    """The objective returned NaN at some particle."""


#: Absolute energy-gap tolerance the solver is expected to reach on the
#: problem scales of this library; tests and callers budget against it.
SOLVER_TOL = 1e-3


@dataclass(frozen=True)
class CboConfig:
    particles: int = 30
    noise: float = 2.0
    dt: float = 0.01
    sharpness: float = 1e8  # weight exponent alpha
    steps: int = 30
    drift: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.particles < 2:
            raise ValueError("need at least 2 particles")
        if self.dt < 0 or self.noise < 0:
            raise ValueError("dt and noise must be nonnegative")
        if self.sharpness <= 0:
            raise ValueError("sharpness must be positive")

    def with_seed(self, seed: int) -> "CboConfig":
        return replace(self, seed=seed)


@dataclass
class Ensemble:
    """Particle positions with cached objective values."""

    points: np.ndarray  # (N, d)
    values: np.ndarray  # (N,)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def diameter(self) -> float:
        diff = self.points[:, None, :] - self.points[None, :, :]
        return float(np.sqrt((diff**2).sum(-1)).max())


def consensus_point(points: np.ndarray, values: np.ndarray, sharpness: float) -> np.ndarray:
    """Exponentially weighted mean sum_i w_i x_i / sum_i w_i.

    Weights w_i = exp(-alpha * (E_i - min_j E_j)); the shift by the
    minimum keeps the exponentials in range for large alpha.
    """
    values = np.asarray(values, dtype=float)
    w = np.exp(-sharpness * (values - values.min()))
    return (w[:, None] * points).sum(0) / w.sum()


def cbo_step(
    ens: Ensemble,
    objective,
    cfg: CboConfig,
    feasible: IntervalBox,
    rng: np.random.Generator,
) -> Ensemble:
    """One drift-diffusion-project update of the ensemble.

    x_i <- x_i - drift*dt*(x_i - c) + noise*sqrt(dt)*||x_i - c||_2 * zeta_i
    with zeta_i standard Gaussian, followed by a componentwise clip into
    the feasible box, so feasibility is exact after every step.
    """
    c = consensus_point(ens.points, ens.values, cfg.sharpness)
    diff = ens.points - c
    dist = np.sqrt((diff**2).sum(-1, keepdims=True))
    noise = cfg.noise * np.sqrt(cfg.dt) * dist * rng.standard_normal(ens.points.shape)
    moved = ens.points - cfg.drift * cfg.dt * diff + noise
    moved = np.clip(moved, feasible.lower, feasible.upper)
    return Ensemble(moved, _evaluate(objective, moved))


def _evaluate(objective, points: np.ndarray) -> np.ndarray:
    values = np.asarray(objective(points), dtype=float)
    if values.shape != (points.shape[0],):
        raise ValueError("objective must map (N, d) points to (N,) values")
    if np.any(np.isnan(values)):
        raise NonFiniteObjectiveError("objective returned NaN")
    return values


def solve(objective, feasible: IntervalBox, cfg: CboConfig | None = None) -> tuple[np.ndarray, float]:
    """Minimize a (batched) objective over an interval box.

    ``objective`` takes an (N, d) array of points and returns (N,)
    values.  Particles start uniformly in the box; the result is the
    best-ever evaluated particle and its value, which is nonincreasing
    across steps by construction.  Deterministic given the config seed.
    """
    cfg = cfg or CboConfig()
    rng = np.random.default_rng(cfg.seed)
    points = feasible.sample(rng, cfg.particles)
    ens = Ensemble(points, _evaluate(objective, points))
    best_idx = int(np.argmin(ens.values))
    best_x, best_v = ens.points[best_idx].copy(), float(ens.values[best_idx])
    for _ in range(cfg.steps):
        ens = cbo_step(ens, objective, cfg, feasible, rng)
        idx = int(np.argmin(ens.values))
        if ens.values[idx] < best_v:
            best_x, best_v = ens.points[idx].copy(), float(ens.values[idx])
    return best_x, best_v
