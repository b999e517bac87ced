import numpy as np
import pytest
import torch

from hierarchyflow.config import make_config, mini_config
from hierarchyflow.nets import build_model


@pytest.fixture(scope="session")
def mini_model():
    """Small two-block model shared by read-only tests."""
    return build_model(mini_config(), seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def rand_image(h=16, w=16, c=3, seed=0, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(c, h, w, generator=gen).to(dtype)
