import numpy as np
import pytest

from gammaspec.frontend import NoiseParams
from gammaspec.geometry import ArrayGeometry


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def noise():
    return NoiseParams()


@pytest.fixture
def small_geometry():
    # one row of each populated kind plus a gap, 8 columns
    return ArrayGeometry(rows=6, cols=8, er_rows=(1, 2), lf_rows=(3, 3), ec_rows=(5, 6),
                         ec_areas=(6.25, 4.41), chip_size=(0.108, 0.208))
