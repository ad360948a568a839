"""Shared fixtures: seeded generators and tiny model configs."""

import numpy as np
import pytest

from maeip.autograd import Tensor
from maeip.model.config import ModelConfig, get_preset
from maeip.model.params import init_params


@pytest.fixture
def rng():
    """Seeded generator, fresh per test."""
    return np.random.default_rng(1234)


@pytest.fixture
def nano():
    return get_preset("csformer-nano")


@pytest.fixture
def nano_params(nano):
    return init_params(nano, seed=0)


@pytest.fixture
def live_params(nano, rng):
    """Nano parameters with a non-zero output conv, so outputs depend on every layer."""
    params = init_params(nano, seed=0)
    params["output.weight"] = Tensor(
        (0.05 * rng.standard_normal(params["output.weight"].shape)).astype(np.float32),
        requires_grad=True,
        name="output.weight",
    )
    return params


@pytest.fixture
def tiny():
    """Smallest valid config: width 4, one block per stage."""
    return ModelConfig(base_channels=4, blocks_per_stage=(1,) * 9, heads_per_stage=(1, 1, 2, 4, 4), window_size=4)
