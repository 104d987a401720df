"""Signed/normalized gradient flows in l^p spaces, ball-constrained
minimizing-movement schemes, adversarial attacks as their instances, and
particle-cloud transport flows."""

from .cbo import CboConfig, Ensemble, NonFiniteObjectiveError, SOLVER_TOL
from .energy import Energy, SemiLinearization, UndefinedSlopeError, e_tau, e_tau_grid, slope
from .geometry import (
    L1,
    L2,
    LINF,
    BoxConstraint,
    EmptyIntersectionError,
    IntervalBox,
    PNorm,
    box_intersect,
    clip,
    dual_argmax,
    dual_exponent,
    linear_min_over_box,
    norm,
)
from .measure import (
    BottleneckPlan,
    InfeasibleMatchingError,
    InfiniteEnergyError,
    ParticleCloud,
    cloud_slope,
    dro_check,
    potential_energy,
    pushforward_flow,
    pushforward_step_discrete,
    w_infty,
)
from .net import (
    Dataset,
    DivergenceError,
    Mlp,
    TrainConfig,
    adversarial_energy,
    grad_input,
    mse,
    train,
    two_moons,
)
from .schemes import (
    FlowDiagnostics,
    Trajectory,
    de_giorgi_interpolate,
    diagnostics,
    error_study,
    fgsm_step,
    ifgsm,
    minimizing_movement,
    ngd_step,
    semi_implicit_minmove,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
