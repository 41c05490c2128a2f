import numpy as np
import pytest
import torch

from rmmdf import NetworkConfig


def micro_config(**overrides) -> NetworkConfig:
    """Smallest full architecture: 32x32 input, base width 2, plain
    residual units."""
    defaults = dict(resolution=32, width_multiplier=1 / 32, stages=2)
    defaults.update(overrides)
    return NetworkConfig(**defaults)


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(1234)
    np.random.seed(1234)
    yield
