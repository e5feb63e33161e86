import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fpflow.coefficients import make_family
from fpflow.discretization import GridSpec


@pytest.fixture
def grid64():
    return GridSpec(1, 6.0, 64)


@pytest.fixture
def linear_ou():
    return make_family("linear-ou", 1)


@pytest.fixture
def porous_medium():
    return make_family("porous-medium", 1)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=20240812))
