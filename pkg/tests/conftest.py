import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "scripts"))

from make_digit_pool import build_digit_pool  # noqa: E402

from worldlab.envs.numbers import load_mnist  # noqa: E402

POOL_DIR = os.path.join(os.path.dirname(__file__), "..", ".cache", "digit_pool")


@pytest.fixture(scope="session")
def digit_pool_dir():
    return build_digit_pool(POOL_DIR)


@pytest.fixture(scope="session")
def digit_pool(digit_pool_dir):
    return load_mnist(digit_pool_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
