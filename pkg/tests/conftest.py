import time

import pytest

from infflow import CboConfig, Mlp, TrainConfig, mse, train, two_moons


@pytest.fixture(scope="session")
def moons():
    return two_moons(1000, noise=0.1, seed=0)


@pytest.fixture(scope="session")
def gelu_training(moons):
    """Train the GeLU classifier once per session; several tests reuse it."""
    net = Mlp.classifier(activation="gelu", seed=0)
    start = time.perf_counter()
    history = train(net, moons, TrainConfig(epochs=100, batch_size=100, seed=0))
    elapsed = time.perf_counter() - start
    return {
        "net": net,
        "history": history,
        "elapsed": elapsed,
        "final_mse": mse(net, moons),
    }


@pytest.fixture(scope="session")
def gelu_net(gelu_training):
    return gelu_training["net"]


@pytest.fixture(scope="session")
def tuned_solver():
    # default ensemble size and noise, but a larger dt and more steps so the
    # ensemble contracts onto the minimizer within the step budget; used
    # wherever a tight tolerance is asserted
    return CboConfig(dt=0.1, steps=60)
