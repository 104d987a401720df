"""Small MLP classifier with hand-written reverse-mode differentiation.

The architecture is fixed to the block family Linear -> activation ->
BatchNorm (three blocks of width 20) followed by Linear -> Sigmoid, a
binary classifier on R^2.  Gradients with respect to both parameters and
inputs are accumulated layer by layer; no autodiff framework is used, so
the input-gradient path feeding the attack schemes is fully transparent.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .energy import Energy
from .geometry import LINF, BoxConstraint

SCHEMA_VERSION = 1


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


# ---------------------------------------------------------------------------
# layers


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        limit = np.sqrt(6.0 / (d_in + d_out))
        self.weight = rng.uniform(-limit, limit, size=(d_out, d_in))
        self.bias = np.zeros(d_out)
        self.grads: dict[str, np.ndarray] = {}
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._x = x
        return x @ self.weight.T + self.bias

    def backward(self, gout: np.ndarray) -> np.ndarray:
        self.grads["weight"] = gout.T @ self._x
        self.grads["bias"] = gout.sum(0)
        return gout @ self.weight


_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _phi(z):
    return np.exp(-0.5 * z * z) * _INV_SQRT_2PI


def _Phi(z):
    return 0.5 * (1.0 + erf(z / _SQRT2))


class Activation:
    """Entrywise nonlinearity; kind in {relu, gelu, sigmoid}.

    GeLU uses the exact Gaussian CDF, z*Phi(z), with derivative
    Phi(z) + z*phi(z).  The ReLU derivative at 0 is taken as 0.
    """

    KINDS = ("relu", "gelu", "sigmoid")

    def __init__(self, kind: str):
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self._z = None
        self._out = None

    def params(self):
        return {}

    def forward(self, z: np.ndarray, train: bool) -> np.ndarray:
        self._z = z
        if self.kind == "relu":
            out = np.maximum(z, 0.0)
        elif self.kind == "gelu":
            out = z * _Phi(z)
        else:
            out = 1.0 / (1.0 + np.exp(-z))
        self._out = out
        return out

    def backward(self, gout: np.ndarray) -> np.ndarray:
        z = self._z
        if self.kind == "relu":
            deriv = (z > 0).astype(float)
        elif self.kind == "gelu":
            deriv = _Phi(z) + z * _phi(z)
        else:
            deriv = self._out * (1.0 - self._out)
        return gout * deriv


class BatchNorm:
    """Per-feature normalization; batch statistics in train mode, running
    exponential averages (momentum 0.1) in eval mode."""

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.eps = eps
        self.momentum = momentum
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if train:
            mu = x.mean(0)
            var = x.var(0)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mu, var = self.running_mean, self.running_var
        ivar = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * ivar
        self._cache = (xhat, ivar, train, x - mu)
        return self.gamma * xhat + self.beta

    def backward(self, gout: np.ndarray) -> np.ndarray:
        xhat, ivar, train, xc = self._cache
        self.grads["gamma"] = (gout * xhat).sum(0)
        self.grads["beta"] = gout.sum(0)
        gxhat = gout * self.gamma
        if not train:
            return gxhat * ivar
        n = gout.shape[0]
        gvar = (gxhat * xc * (-0.5) * ivar**3).sum(0)
        gmu = (-gxhat * ivar).sum(0) + gvar * (-2.0 / n) * xc.sum(0)
        return gxhat * ivar + gvar * 2.0 * xc / n + gmu / n


# ---------------------------------------------------------------------------
# network


class Mlp:
    def __init__(self, layers, activation: str):
        self.layers = layers
        self.activation = activation

    @classmethod
    def classifier(cls, activation: str = "gelu", width: int = 20, blocks: int = 3, seed: int = 0):
        """The fixed experiment architecture: (Linear/act/BN) blocks then
        Linear -> Sigmoid, mapping R^2 to (0, 1)."""
        rng = np.random.default_rng(seed)
        layers = []
        d_in = 2
        for _ in range(blocks):
            layers += [Linear(d_in, width, rng), Activation(activation), BatchNorm(width)]
            d_in = width
        layers += [Linear(d_in, 1, rng), Activation("sigmoid")]
        return cls(layers, activation)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != 2:
            raise ValueError(f"expected input dimension 2, got {x.shape[1]}")
        for layer in self.layers:
            x = layer.forward(x, train)
        return x[:, 0]

    def backward(self, gout: np.ndarray) -> np.ndarray:
        """Propagate d(loss)/d(output) back to the input; parameter grads
        are stored on the layers."""
        g = np.atleast_2d(np.asarray(gout, dtype=float)).reshape(-1, 1)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def parameters(self):
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                yield (i, name), arr, layer

    # -- serialization ------------------------------------------------------

    def to_json(self) -> dict:
        layers = []
        for layer in self.layers:
            if isinstance(layer, Linear):
                layers.append(
                    {"kind": "linear", "weight": layer.weight.tolist(), "bias": layer.bias.tolist()}
                )
            elif isinstance(layer, Activation):
                layers.append({"kind": "activation", "activation": layer.kind})
            else:
                layers.append(
                    {
                        "kind": "batchnorm",
                        "gamma": layer.gamma.tolist(),
                        "beta": layer.beta.tolist(),
                        "running_mean": layer.running_mean.tolist(),
                        "running_var": layer.running_var.tolist(),
                        "eps": layer.eps,
                    }
                )
        return {"schema_version": SCHEMA_VERSION, "activation": self.activation, "layers": layers}

    @classmethod
    def from_json(cls, doc: dict) -> "Mlp":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema: {doc.get('schema_version')}")
        layers = []
        for entry in doc["layers"]:
            if entry["kind"] == "linear":
                w = np.asarray(entry["weight"], dtype=float)
                layer = Linear(w.shape[1], w.shape[0], np.random.default_rng(0))
                layer.weight = w
                layer.bias = np.asarray(entry["bias"], dtype=float)
            elif entry["kind"] == "activation":
                layer = Activation(entry["activation"])
            else:
                gamma = np.asarray(entry["gamma"], dtype=float)
                layer = BatchNorm(gamma.size, eps=entry["eps"])
                layer.gamma = gamma
                layer.beta = np.asarray(entry["beta"], dtype=float)
                layer.running_mean = np.asarray(entry["running_mean"], dtype=float)
                layer.running_var = np.asarray(entry["running_var"], dtype=float)
            layers.append(layer)
        return cls(layers, doc["activation"])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def grad_input(net: Mlp, x, target: float) -> np.ndarray:
    """Gradient of x -> |h(x) - target|^2 with respect to the input."""
    x = np.asarray(x, dtype=float)
    out = net.forward(x[None, :], train=False)
    gin = net.backward(2.0 * (out - target))
    return gin[0]


def adversarial_energy(
    net: Mlp, target: float, x0=None, budget: float | None = None
) -> Energy:
    """Energy whose descent drives the classifier output away from ``target``:
    smooth part -(h(x) - target)^2, plus the budget box around x0 when given."""
    box = None
    if budget is not None:
        if x0 is None:
            raise ValueError("a budget requires the clean input x0")
        box = BoxConstraint(np.asarray(x0, dtype=float), budget)

    def value(x):
        h = net.forward(x[None, :], train=False)[0]
        return -((h - target) ** 2)

    def batch(points):
        h = net.forward(points, train=False)
        return -((h - target) ** 2)

    return Energy(
        value=value,
        grad=lambda x: -grad_input(net, x, target),
        box=box,
        space=LINF,
        batch_value=batch,
    )


# ---------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    inputs: np.ndarray  # (K, 2)
    labels: np.ndarray  # (K,) in {0, 1}

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x1", "x2", "label"])
            for (x1, x2), y in zip(self.inputs, self.labels):
                writer.writerow([repr(float(x1)), repr(float(x2)), int(y)])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        inputs = np.array([[float(r["x1"]), float(r["x2"])] for r in rows])
        labels = np.array([float(r["label"]) for r in rows])
        return cls(inputs, labels)


def two_moons(count: int, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Two interleaved half-circles with additive Gaussian coordinate noise.

    Points alternate between the moons: even indices on (cos t, sin t)
    with label 0, odd indices on (1 - cos t, 0.5 - sin t) with label 1,
    t uniform in [0, pi].  Deterministic given the seed.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    labels = (np.arange(count) % 2).astype(float)
    t = rng.uniform(0.0, np.pi, size=count)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    inputs = np.where(labels[:, None] == 0.0, upper, lower)
    inputs = inputs + rng.normal(scale=noise, size=inputs.shape) if noise > 0 else inputs
    return Dataset(inputs, labels)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


class Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, net: Mlp):
        cfg = self.cfg
        self.t += 1
        for key, param, layer in net.parameters():
            g = layer.grads[key[1]]
            m = self.m.setdefault(key, np.zeros_like(param))
            v = self.v.setdefault(key, np.zeros_like(param))
            m += (1 - cfg.beta1) * (g - m)
            v += (1 - cfg.beta2) * (g * g - v)
            mhat = m / (1 - cfg.beta1**self.t)
            vhat = v / (1 - cfg.beta2**self.t)
            param -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)


def mse(net: Mlp, data: Dataset) -> float:
    """Eval-mode squared-error objective (1/2K) * sum |h(x_k) - y_k|^2."""
    out = net.forward(data.inputs, train=False)
    return float(0.5 * np.mean((out - data.labels) ** 2))


def train(net: Mlp, data: Dataset, cfg: TrainConfig | None = None) -> list[float]:
    """Minibatch Adam on the squared-error loss; returns per-epoch losses.

    Each epoch shuffles the dataset into disjoint batches of
    ``batch_size`` and averages the batch losses for the history entry.
    Deterministic given the config seed.
    """
    cfg = cfg or TrainConfig()
    if data.size == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(data.size)
        batch_losses = []
        for start in range(0, data.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x, y = data.inputs[idx], data.labels[idx]
            out = net.forward(x, train=True)
            resid = out - y
            loss = 0.5 * np.mean(resid**2)
            if not np.isfinite(loss):
                raise DivergenceError(f"training loss became non-finite: {loss}")
            net.backward(resid / idx.size)
            opt.step(net)
            batch_losses.append(float(loss))
        history.append(float(np.mean(batch_losses)))
    return history
