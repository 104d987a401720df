"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line with its runtime so the whole
gate can be read off a verbose run at a glance.
"""

import itertools
import time

import numpy as np
import pytest

from infflow import (
    LINF,
    BoxConstraint,
    Energy,
    ParticleCloud,
    SOLVER_TOL,
    adversarial_energy,
    clip,
    dro_check,
    dual_argmax,
    dual_exponent,
    grad_input,
    ifgsm,
    linear_min_over_box,
    minimizing_movement,
    norm,
    potential_energy,
    pushforward_flow,
    pushforward_step_discrete,
    semi_implicit_minmove,
    w_infty,
)
from infflow.geometry import PNorm, box_intersect
from infflow.schemes import averaged_max_distance, estimate_gradient_lipschitz


class _Check:
    """Collects named boolean conditions and reports them as one line."""

    def __init__(self, label):
        self.label = label
        self.failures = []
        self.start = time.perf_counter()

    def expect(self, condition, message):
        if not condition:
            self.failures.append(message)

    def done(self, budget):
        elapsed = time.perf_counter() - self.start
        self.expect(elapsed < budget, f"runtime {elapsed:.1f}s exceeds {budget}s")
        status = "PASS" if not self.failures else "FAIL"
        print(f"[{status}] {self.label} ({elapsed:.1f}s)")
        assert not self.failures, f"{self.label}: " + "; ".join(self.failures)


def quadratic_energy():
    return Energy(
        value=lambda x: 0.5 * float(x @ x),
        grad=lambda x: np.asarray(x, dtype=float),
        space=LINF,
        batch_value=lambda pts: 0.5 * (pts**2).sum(-1),
    )


def test_criterion_1_quadratic_exact_flow(tuned_solver):
    check = _Check("1 quadratic constant-speed flow")
    E = quadratic_energy()
    for tau in (0.1, 0.01):
        steps = round(1.0 / tau)
        exact = np.maximum(1.0 - tau * np.arange(steps + 1), 0.0)
        semi = semi_implicit_minmove(E, np.array([1.0]), tau, steps)
        check.expect(
            np.max(np.abs(semi.points[:, 0] - exact)) <= 1e-12,
            f"tau={tau}: semi-implicit iterates deviate from 1-k*tau beyond roundoff",
        )
        implicit = minimizing_movement(E, np.array([1.0]), tau, steps, tuned_solver)
        check.expect(
            np.max(np.abs(implicit.points[:, 0] - exact)) <= 1e-3,
            f"tau={tau}: implicit iterates off by more than 1e-3",
        )
        ts = np.linspace(0.0, 1.0, 2001)
        for traj, name in ((semi, "semi-implicit"), (implicit, "implicit")):
            sup = max(abs(traj.step_at(t)[0] - max(1.0 - t, 0.0)) for t in ts)
            check.expect(
                sup <= tau + 1e-3,
                f"tau={tau}: {name} interpolation sup-distance {sup:.4f} > tau + 1e-3",
            )
    check.done(budget=5.0)


def test_criterion_2_dual_argmax_duality():
    check = _Check("2 dual-argmax duality")
    rng = np.random.default_rng(0)
    for p in (PNorm(1.0), PNorm(1.5), PNorm(2.0), PNorm(3.0), PNorm(float("inf"))):
        q = dual_exponent(p)
        worst_gap, worst_norm = 0.0, 0.0
        for _ in range(1000):
            xi = rng.normal(size=int(rng.integers(1, 7)))
            v = dual_argmax(xi, p)
            nq = norm(xi, q)
            worst_gap = max(worst_gap, abs(float(xi @ v) - nq) / nq)
            worst_norm = max(worst_norm, norm(v, p))
        check.expect(worst_gap <= 1e-12, f"p={p}: relative duality gap {worst_gap:.2e}")
        check.expect(worst_norm <= 1 + 1e-12, f"p={p}: ||v||_p = {worst_norm}")
    check.done(budget=1.0)


def test_criterion_3_clip_equivalence():
    check = _Check("3 clipped signed step attains the linear minimum")
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 6))
        x0 = rng.normal(size=d)
        eps = float(rng.uniform(0.05, 1.0))
        tau = float(rng.uniform(0.01, 1.5))
        budget = BoxConstraint(x0, eps)
        x = clip(x0 + rng.uniform(-eps, eps, size=d), budget)
        xi = rng.normal(size=d)
        step = clip(x - tau * np.sign(xi), budget)
        region = box_intersect(budget.interval(), BoxConstraint(x, tau).interval())
        _, oracle = linear_min_over_box(xi, region)
        worst = max(worst, float(xi @ step) - oracle)
    check.expect(worst <= 1e-12, f"worst gap to the corner oracle: {worst:.2e}")
    check.done(budget=1.0)


def test_criterion_4_backprop_vs_finite_differences():
    from infflow import Mlp

    check = _Check("4 backprop matches central finite differences")
    net = Mlp.classifier("gelu", seed=11)
    rng = np.random.default_rng(11)
    x = rng.normal(size=(8, 2))
    y = rng.integers(0, 2, size=8).astype(float)
    h = 1e-5

    def loss():
        out = net.forward(x, train=True)
        return 0.5 * np.mean((out - y) ** 2)

    out = net.forward(x, train=True)
    gin = net.backward((out - y) / x.shape[0])
    params = [(key, arr, layer) for key, arr, layer in net.parameters()]
    worst = 0.0
    for probe in range(100):
        if probe % 2 == 0:  # parameter probe
            key, arr, layer = params[int(rng.integers(len(params)))]
            flat = arr.reshape(-1)
            j = int(rng.integers(flat.size))
            backprop = layer.grads[key[1]].reshape(-1)[j]
            old = flat[j]
            flat[j] = old + h
            fp = loss()
            flat[j] = old - h
            fm = loss()
            flat[j] = old
        else:  # input probe
            i, j = int(rng.integers(x.shape[0])), int(rng.integers(2))
            backprop = gin[i, j]
            old = x[i, j]
            x[i, j] = old + h
            fp = loss()
            x[i, j] = old - h
            fm = loss()
            x[i, j] = old
        fd = (fp - fm) / (2 * h)
        worst = max(worst, abs(backprop - fd) / max(1.0, abs(fd), abs(backprop)))
    check.expect(worst <= 1e-4, f"worst relative gradient error {worst:.2e}")
    check.done(budget=5.0)


def test_criterion_5_two_moons_training(gelu_training):
    check = _Check("5 two-moons training")
    check.expect(
        gelu_training["final_mse"] < 0.05,
        f"final MSE {gelu_training['final_mse']:.4f} >= 0.05",
    )
    check.expect(
        gelu_training["elapsed"] < 60.0,
        f"training took {gelu_training['elapsed']:.1f}s",
    )
    check.done(budget=60.0)


def test_criterion_6_attack_flips_within_budget(gelu_net):
    check = _Check("6 attack flips the label with an exact budget")
    x0 = np.array([0.45, 0.3])
    eps, tau = 0.25, 0.025
    traj = ifgsm(lambda x: grad_input(gelu_net, x, 1.0), x0, eps, tau, 40)
    clean = float(gelu_net.forward(x0[None, :])[0])
    final = float(gelu_net.forward(traj.points[-1][None, :])[0])
    check.expect(
        (clean - 0.5) * (final - 0.5) < 0,
        f"no flip: clean output {clean:.3f}, attacked output {final:.3f}",
    )
    check.expect(
        bool(np.max(np.abs(traj.points - x0)) <= eps),
        "an iterate left the budget box",
    )
    check.done(budget=5.0)


def test_criterion_7_convergence_study_trend(gelu_net, tuned_solver):
    check = _Check("7 explicit-implicit gap shrinks with the step size")
    taus = [0.2, 0.1, 0.05, 0.025]
    samples, eps, target = 50, 0.25, 1.0
    domain = np.array([[-1.5, 2.5], [-1.0, 1.5]])
    errors = []
    for tau in taus:
        steps = int(np.floor(1.0 / tau))
        rng = np.random.default_rng(int(round(tau * 1e6)) % 100003)
        pairs = []
        for s in range(samples):
            x0 = rng.uniform(domain[:, 0], domain[:, 1])
            explicit = ifgsm(lambda x: grad_input(gelu_net, x, target), x0, eps, tau, steps)
            E = adversarial_energy(gelu_net, target, x0=x0, budget=eps)
            solver = tuned_solver.with_seed(1009 * s + 31 * int(round(1000 * tau)))
            implicit = minimizing_movement(E, x0, tau, steps, solver)
            pairs.append((explicit, implicit))
        errors.append(averaged_max_distance(pairs))
    inversions = sum(b > a for a, b in zip(errors, errors[1:]))
    check.expect(
        inversions <= 1,
        f"{inversions} adjacent inversions in {[f'{e:.4f}' for e in errors]}",
    )
    check.expect(
        errors[-1] < errors[0],
        f"no overall decrease: e_0.025={errors[-1]:.4f} vs e_0.2={errors[0]:.4f}",
    )
    check.done(budget=600.0)


def test_criterion_8_dissipation(gelu_net, tuned_solver):
    check = _Check("8 dissipation bounds along the flows")
    x0 = np.array([0.45, 0.3])
    tau = 0.025
    E = adversarial_energy(gelu_net, 1.0)
    semi = semi_implicit_minmove(E, x0, tau, 40)
    lip = estimate_gradient_lipschitz(E, semi.points, jitter=tau, seed=0, samples=300)
    energies = np.array([E(x) for x in semi.points])
    bound = 0.5 * lip * tau**2
    worst = float(np.max(np.diff(energies)))
    check.expect(
        worst <= bound + 1e-12,
        f"semi-implicit increase {worst:.2e} exceeds 0.5*L*tau^2 = {bound:.2e}",
    )
    boxed = adversarial_energy(gelu_net, 1.0, x0=x0, budget=0.25)
    implicit = minimizing_movement(boxed, x0, tau, 20, tuned_solver)
    imp_energies = np.array([boxed(x) for x in implicit.points])
    worst_imp = float(np.max(np.diff(imp_energies)))
    check.expect(
        worst_imp <= SOLVER_TOL,
        f"implicit increase {worst_imp:.2e} exceeds the solver tolerance",
    )
    check.done(budget=30.0)


def test_criterion_9_bottleneck_matches_brute_force():
    check = _Check("9 bottleneck distance equals the brute-force minimum")
    rng = np.random.default_rng(9)
    for trial in range(200):
        n = int(rng.integers(2, 7))
        labeled = trial % 2 == 1
        labels = rng.integers(0, 2, size=n) if labeled else None
        a = ParticleCloud(rng.normal(size=(n, 2)), labels)
        b = ParticleCloud(
            rng.normal(size=(n, 2)),
            None if labels is None else labels[rng.permutation(n)],
        )
        value, plan = w_infty(a, b, LINF)
        best = np.inf
        for perm in itertools.permutations(range(n)):
            if labeled and any(a.labels[i] != b.labels[j] for i, j in enumerate(perm)):
                continue
            cost = max(
                float(np.max(np.abs(a.points[i] - b.points[j])))
                for i, j in enumerate(perm)
            )
            best = min(best, cost)
        check.expect(value == best, f"trial {trial}: {value} != brute force {best}")
        if labeled:
            check.expect(
                bool(np.all(a.labels == b.labels[plan.permutation])),
                f"trial {trial}: plan breaks a label",
            )
    check.done(budget=5.0)


def test_criterion_10_pushforward_optimality(tuned_solver):
    check = _Check("10 pushforward step is jointly optimal; flows obey the speed limit")
    # 5x5 grid energy, three labeled particles, one grid-restricted step
    rng = np.random.default_rng(10)
    axes = np.linspace(0.0, 1.0, 5)
    xx, yy = np.meshgrid(axes, axes, indexing="ij")
    candidates = np.stack([xx.ravel(), yy.ravel()], axis=1)
    values = rng.uniform(size=25)
    cloud = ParticleCloud([[0.0, 0.0], [0.5, 0.5], [1.0, 0.75]], labels=[0, 1, 0])
    tau = 0.3
    moved = pushforward_step_discrete(cloud, values, candidates, tau, LINF)
    achieved = np.mean(
        [values[np.argmax(np.all(candidates == q, axis=1))] for q in moved.points]
    )
    # exhaustive minimum over all joint candidate assignments
    feasible = [
        np.flatnonzero(np.max(np.abs(candidates - x), axis=1) <= tau)
        for x in cloud.points
    ]
    joint = min(
        np.mean([values[i] for i in combo]) for combo in itertools.product(*feasible)
    )
    check.expect(achieved == joint, f"potential {achieved} != joint minimum {joint}")
    np.testing.assert_array_equal(moved.labels, cloud.labels)

    E = quadratic_energy()
    start = ParticleCloud(rng.normal(size=(4, 2)), labels=[0, 0, 1, 1])
    for scheme in ("semi-implicit", "minmove", "ifgsm"):
        budget = 0.5 if scheme == "ifgsm" else None
        flows = pushforward_flow(start, E, scheme, 0.1, 4, tuned_solver, budget=budget)
        for k, c in enumerate(flows):
            dist, _ = w_infty(flows[0], c, LINF)
            check.expect(
                dist <= k * 0.1 + 1e-9,
                f"{scheme}: W-infinity {dist:.4f} at step {k} exceeds k*tau",
            )
            check.expect(
                bool(np.all(c.labels == start.labels)), f"{scheme}: labels changed"
            )
    check.done(budget=10.0)


def test_criterion_11_dro_exchange(gelu_net, tuned_solver):
    check = _Check("11 worst-case mean equals the pushforward potential")
    cloud_points = np.random.default_rng(12).uniform(-1.0, 2.0, size=(20, 2))
    labels = np.arange(20) % 2
    cloud = ParticleCloud(cloud_points, labels)
    loss = lambda pts: (gelu_net.forward(pts) - 1.0) ** 2
    lhs, rhs, gap = dro_check(cloud, loss, eps=0.25, config=tuned_solver)
    check.expect(
        gap <= 2 * SOLVER_TOL,
        f"gap {gap:.2e} between mean max {lhs:.4f} and potential {rhs:.4f}",
    )
    check.done(budget=30.0)
