import os

import numpy as np
import pytest

from app.core.models import E1Params, QuadraticParams
from app.core.problems import E1Problem, QuadraticProblem


def pytest_collection_modifyitems(config, items):
    if os.environ.get("OPTVO_FULL_SCALE") == "1":
        return
    skip = pytest.mark.skip(reason="set OPTVO_FULL_SCALE=1 to run the full-scale E1 checks")
    for item in items:
        if "full_scale" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def e1_small():
    return E1Problem(E1Params(M=5))


@pytest.fixture
def quadratic():
    """M=3, N=2 quadratic with a moderate weight homotopy"""
    return QuadraticProblem(QuadraticParams.generate(M=3, N=2, seed=3, spread=0.5))


@pytest.fixture
def quadratic_1d():
    return QuadraticProblem(QuadraticParams.generate(M=3, N=1, seed=2, spread=0.3))


@pytest.fixture
def identity_homotopy():
    """Target weights equal the initial weights"""
    return QuadraticProblem(QuadraticParams.generate(M=3, N=2, seed=4, spread=0.0))

