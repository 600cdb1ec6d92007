import os
import sys

import numpy as np
import pytest

# Make the src package importable when pytest runs from the repository root
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.algebroid import Chart, PoissonBivector, cotangent_algebroid
from src.oracles import so3_algebra, so3_cotangent, so3_representation


@pytest.fixture
def rng():
    return np.random.default_rng(1729)


@pytest.fixture
def so3():
    return so3_algebra()


@pytest.fixture
def so3_dual():
    return so3_cotangent()


@pytest.fixture
def representation():
    return so3_representation()


@pytest.fixture
def zero_plane():
    """Cotangent algebroid of the zero bivector on the 2-box."""
    return cotangent_algebroid(PoissonBivector(Chart.box(2)), name='zero')


@pytest.fixture
def symplectic_plane():
    """Cotangent algebroid of {x1, x2} = 1 on the 2-box."""
    return cotangent_algebroid(PoissonBivector(Chart.box(2), {(0, 1): '1'}), name='plane')
