import numpy as np
import pytest

from cameval import nn


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tinygap():
    return nn.build_model("tinygap", num_classes=10, seed=7)


@pytest.fixture(scope="session")
def tinyflat():
    return nn.build_model("tinyflat", num_classes=6, seed=11)


@pytest.fixture
def image(rng):
    return rng.normal(size=(3, 32, 32))


def tiny_model(layers, input_shape, num_classes, target, seed=0, capture_after_relu=True):
    return nn.Model(layers=layers, weights=nn.init_weights(layers, seed), target_layer=target,
                    num_classes=num_classes, input_shape=input_shape, capture_after_relu=capture_after_relu)


def four_by_four_model(seed=3, num_classes=4):
    """TinyGAP-shaped network sized for 4x4 inputs."""
    layers = nn.tinygap_layers(num_classes, width=4)
    return tiny_model(layers, (3, 4, 4), num_classes, "conv2", seed)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
