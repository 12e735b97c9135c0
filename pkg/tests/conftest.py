import numpy as np
import pytest

from chainsolve import calibration
from chainsolve.calibration import CalibrationTracker
from chainsolve.fields import Field, PotentialSpec, planar_radius_sq
from chainsolve.kernel import build_kernel_table
from chainsolve.resilience import get_table_cache
from chainsolve.schemas import GridSpec, SymmetryTag


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec(L=4.0, n_x=16, ell=1.0, n_z=8)


@pytest.fixture(scope="session")
def small_table(small_grid):
    return build_kernel_table(small_grid)


@pytest.fixture
def unit_potential():
    return PotentialSpec.constant(1.0)


@pytest.fixture
def well_potential():
    return PotentialSpec.radial_well(2.0, 1.0, 1.5)


@pytest.fixture
def gaussian(small_grid):
    """x3-constant radial Gaussian on the small grid"""
    planar = np.exp(-planar_radius_sq(small_grid) / 1.5**2)
    return Field(small_grid, planar, SymmetryTag.RADIAL).extend()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def fresh_caches(monkeypatch):
    """Empty table cache and an in-memory calibration tracker for every test"""
    get_table_cache().clear()
    monkeypatch.setattr(calibration, "_calibration_tracker", CalibrationTracker())
    yield
    get_table_cache().clear()
