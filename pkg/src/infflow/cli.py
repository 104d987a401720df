"""Experiment driver: train the classifier, run single-point and cloud
flows, execute the step-size convergence study and emit figure-ready data.

All commands read a single JSON config (``--config``), honor ``--seed``
and ``--out`` overrides, and write tidy CSV/JSON only; plotting is left
to downstream tools.  Exit codes: 0 success, 1 usage/config error, 2
runtime/solver error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import cbo, net as net_mod, schemes
from .energy import Energy
from .geometry import LINF, BoxConstraint
from .measure import ParticleCloud, flow_summary, pushforward_flow
from .net import Mlp, TrainConfig, adversarial_energy, grad_input, two_moons

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="infflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "flow", "attack", "study", "measure-flow"):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="path to the JSON config")
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
        cmd.add_argument("--out", default=None, help="override the output directory")
    return parser


def _load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if config.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema: {config.get('schema_version')!r}")
    return config


def _section(config: dict, name: str) -> dict:
    if name not in config:
        raise ConfigError(f"config is missing the {name!r} section")
    return config[name]


def _cbo_config(config: dict, seed: int) -> cbo.CboConfig:
    return cbo.CboConfig(**{**config.get("cbo", {}), "seed": seed})


def _out_dir(config: dict, args) -> Path:
    out = args.out or config.get("out")
    if not out:
        raise ConfigError("no output directory: set 'out' in the config or pass --out")
    return Path(out)


def _load_model(section: dict) -> Mlp:
    path = section.get("model")
    if not path:
        raise ConfigError("section is missing the 'model' path")
    if not Path(path).exists():
        raise ConfigError(f"model file does not exist: {path}")
    return Mlp.load(path)


def _write_json(path: Path, payload: dict, config: dict):
    payload = {"schema_version": SCHEMA_VERSION, "config": config, **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _quadratic_energy(dim: int = 1) -> Energy:
    return Energy(
        value=lambda x: 0.5 * float(x @ x),
        grad=lambda x: np.asarray(x, dtype=float),
        space=LINF,
        batch_value=lambda pts: 0.5 * (pts**2).sum(-1),
    )


# ---------------------------------------------------------------------------
# commands


def cmd_train(config: dict, args) -> int:
    section = _section(config, "net")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    out = _out_dir(config, args)
    data = two_moons(
        section.get("count", 1000), noise=section.get("noise", 0.1), seed=seed
    )
    model = Mlp.classifier(activation=section.get("activation", "gelu"), seed=seed)
    cfg = TrainConfig(
        epochs=section.get("epochs", 100),
        batch_size=section.get("batch_size", 100),
        learning_rate=section.get("learning_rate", 1e-3),
        seed=seed,
    )
    history = net_mod.train(model, data, cfg)
    model.save(out / "model.json")
    data.to_csv(out / "dataset.csv")
    with open(out / "loss_history.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(history):
            writer.writerow([epoch, repr(loss)])
    final = net_mod.mse(model, data)
    print(f"trained {model.activation} classifier, eval loss {final:.6f}")
    return 0


def _attack_energy(section: dict, model: Mlp) -> tuple[Energy, np.ndarray]:
    x0 = np.asarray(section["x0"], dtype=float)
    target = float(section.get("target", 1.0))
    E = adversarial_energy(model, target, x0=x0, budget=float(section["eps"]))
    return E, x0


def cmd_flow(config: dict, args) -> int:
    section = _section(config, "flow")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    out = _out_dir(config, args)
    model = _load_model(section)
    E, x0 = _attack_energy(section, model)
    target = float(section.get("target", 1.0))
    eps = float(section["eps"])
    horizon = float(section.get("horizon", 1.0))
    for tau in section["taus"]:
        tau = float(tau)
        steps = max(1, round(horizon / tau))
        attack = schemes.ifgsm(lambda x: grad_input(model, x, target), x0, eps, tau, steps)
        schemes.write_trajectory_csv(
            out / f"flow_ifgsm_tau{tau:g}.csv", attack, schemes.diagnostics(E, attack)
        )
        implicit = schemes.minimizing_movement(E, x0, tau, steps, _cbo_config(config, seed))
        schemes.write_trajectory_csv(
            out / f"flow_minmove_tau{tau:g}.csv", implicit, schemes.diagnostics(E, implicit)
        )
    return 0


def cmd_attack(config: dict, args) -> int:
    section = _section(config, "attack")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    out = _out_dir(config, args)
    model = _load_model(section)
    E, x0 = _attack_energy(section, model)
    target = float(section.get("target", 1.0))
    eps = float(section["eps"])
    scheme = section.get("scheme", "ifgsm")
    if scheme == "fgsm":
        adv = schemes.fgsm_step(grad_input(model, x0, target), x0, eps)
        traj = schemes.Trajectory(x0, eps, np.stack([x0, adv]), LINF)
    elif scheme == "ifgsm":
        traj = schemes.ifgsm(
            lambda x: grad_input(model, x, target),
            x0,
            eps,
            float(section["tau"]),
            int(section["steps"]),
        )
    else:
        raise ConfigError(f"unknown attack scheme {scheme!r}")
    schemes.write_trajectory_csv(out / "attack.csv", traj, schemes.diagnostics(E, traj))
    clean = float(model.forward(x0[None, :])[0])
    final = float(model.forward(traj.points[-1][None, :])[0])
    _write_json(
        out / "attack_summary.json",
        {
            "clean_output": clean,
            "final_output": final,
            "flipped": (clean - 0.5) * (final - 0.5) < 0,
            "max_displacement": float(np.max(np.abs(traj.points - x0))),
            "seed": seed,
        },
        config,
    )
    return 0


def cmd_study(config: dict, args) -> int:
    section = _section(config, "study")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    out = _out_dir(config, args)
    samples = int(section.get("samples", 50))
    horizon = float(section.get("horizon", 1.0))
    force_identical = bool(section.get("force_identical", False))
    kind = section.get("energy", "net")
    if kind == "net":
        model = _load_model(section)
        target = float(section.get("target", 1.0))
        eps = float(section["eps"])
        domain = np.asarray(section.get("domain", [[-1.5, 2.5], [-1.0, 1.5]]), dtype=float)
    elif kind == "quadratic":
        domain = np.asarray(section.get("domain", [[0.5, 1.5]]), dtype=float)
    else:
        raise ConfigError(f"unknown study energy {kind!r}")
    results = []
    for tau in section["taus"]:
        tau = float(tau)
        steps = max(1, int(np.floor(horizon / tau)))
        rng = np.random.default_rng(seed + int(round(tau * 1e6)) % 100003)
        pairs = []
        for s in range(samples):
            x0 = rng.uniform(domain[:, 0], domain[:, 1])
            solver = _cbo_config(config, seed + 1009 * s + 31 * int(round(1000 * tau)))
            if kind == "net":
                explicit = schemes.ifgsm(
                    lambda x: grad_input(model, x, target), x0, eps, tau, steps
                )
                E = adversarial_energy(model, target, x0=x0, budget=eps)
            else:
                E = _quadratic_energy()
                explicit = schemes.semi_implicit_minmove(E, x0, tau, steps)
            if force_identical:
                implicit = explicit
            else:
                implicit = schemes.minimizing_movement(E, x0, tau, steps, solver)
            pairs.append((explicit, implicit))
        results.append((tau, schemes.averaged_max_distance(pairs)))
    with open(out / "study.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tau", "e_tau", "samples"])
        for tau, err in results:
            writer.writerow([repr(tau), repr(err), samples])
    _write_json(
        out / "study.json",
        {"errors": [{"tau": tau, "e_tau": err, "samples": samples} for tau, err in results]},
        config,
    )
    return 0


def cmd_measure_flow(config: dict, args) -> int:
    section = _section(config, "measure")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    out = _out_dir(config, args)
    cloud_path = section.get("cloud")
    if not cloud_path or not Path(cloud_path).exists():
        raise ConfigError(f"cloud file does not exist: {cloud_path}")
    cloud = ParticleCloud.from_csv(cloud_path)
    scheme = section.get("scheme", "ifgsm")
    tau = float(section["tau"])
    steps = int(section["steps"])
    budget = section.get("eps")
    budget = float(budget) if budget is not None else None
    kind = section.get("energy", "net")
    solver = _cbo_config(config, seed)
    if kind == "quadratic":
        E = _quadratic_energy()
        clouds = pushforward_flow(cloud, E, scheme, tau, steps, solver, budget=budget)
        summary_energy = E
    elif kind == "net":
        model = _load_model(section)
        if cloud.labels is None:
            raise ConfigError("net-based cloud flows need per-particle labels")
        # each particle attacks its own label: flow label groups separately
        points = np.array(cloud.points, copy=True)
        stacked = [points.copy() for _ in range(steps + 1)]
        for label in np.unique(cloud.labels):
            idx = np.flatnonzero(cloud.labels == label)
            sub = ParticleCloud(points[idx], cloud.labels[idx])
            E = adversarial_energy(model, float(label))
            flows = pushforward_flow(sub, E, scheme, tau, steps, solver, budget=budget)
            for k, c in enumerate(flows):
                stacked[k][idx] = c.points
        clouds = [ParticleCloud(p, cloud.labels.copy()) for p in stacked]
        summary_energy = adversarial_energy(model, 1.0)
    else:
        raise ConfigError(f"unknown measure energy {kind!r}")
    for k, c in enumerate(clouds):
        c.to_csv(out / f"cloud_step{k}.csv")
    rows = flow_summary(clouds, replace(summary_energy, box=None), LINF)
    _write_json(out / "measure_summary.json", {"steps": rows, "tau": tau}, config)
    return 0


_COMMANDS = {
    "train": cmd_train,
    "flow": cmd_flow,
    "attack": cmd_attack,
    "study": cmd_study,
    "measure-flow": cmd_measure_flow,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        return _COMMANDS[args.command](config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
