from __future__ import annotations

import numpy as np
import pytest

from alphaorder.geometry import asymmetric_geometry, default_geometry


@pytest.fixture(scope="session")
def geometry():
    return default_geometry()


@pytest.fixture(scope="session")
def asym_geometry():
    return asymmetric_geometry()


@pytest.fixture
def rng():
    return np.random.default_rng(20240711)
