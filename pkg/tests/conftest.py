import numpy as np
import pytest

from lsgvae.model import ModelConfig, init_params

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def small_config():
    return ModelConfig(L=48, H=24, C=2, P=12, D=16, hidden_width=32)


@pytest.fixture
def small_params(small_config):
    return init_params(small_config, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
