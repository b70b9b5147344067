import numpy as np
import pytest

from clothsim.mesh import SimParams, generate_cloth_grid, generate_icosphere


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_cloth():
    """4x4 unit cloth, no pins, 0.05 kg nodes."""
    return generate_cloth_grid(4, 4, total_mass=0.05 * 16)


@pytest.fixture
def icosphere1():
    return generate_icosphere(1, radius=0.3)


@pytest.fixture
def quiet_params():
    """Gravity-free parameters for force-balance tests."""
    return SimParams(gravity=(0.0, 0.0, 0.0), stiffness=40.0, damping=0.3)
