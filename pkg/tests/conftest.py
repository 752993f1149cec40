from __future__ import annotations

import numpy as np
import pytest

from swincd.autograd.tensor import default_dtype
from swincd.settings import ModelConfig


@pytest.fixture(autouse=True)
def float64_mode():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def toy_config() -> ModelConfig:
    return ModelConfig.toy()
