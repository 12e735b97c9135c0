import pytest
from pydantic import ValidationError

from chainsolve.schemas import BilinearReport, EnergyBreakdown, GridSpec, ScanRow, SlabParams, SolverConfig


def test_grid_spacings():
    grid = GridSpec(L=12.0, n_x=64, ell=1.0, n_z=32)
    assert grid.h_x == pytest.approx(0.375)
    assert grid.h_z == pytest.approx(1.0 / 16.0)
    assert grid.shape == (64, 64, 32)
    assert grid.cell_volume == pytest.approx(0.375**2 / 16.0)


def test_grid_with_ell_keeps_planar_part():
    grid = GridSpec(L=12.0, n_x=64, ell=1.0, n_z=32).with_ell(4.0)
    assert grid.L == 12.0 and grid.n_x == 64 and grid.ell == 4.0 and grid.n_z == 32


@pytest.mark.parametrize("kwargs", [
    {"L": 1.0, "n_x": 9, "ell": 1.0, "n_z": 8},
    {"L": 1.0, "n_x": 8, "ell": 1.0, "n_z": 9},
    {"L": 1.0, "n_x": 8, "ell": 0.0, "n_z": 8},
    {"L": 1.0, "n_x": 4, "ell": 1.0, "n_z": 8},
])
def test_grid_rejects_bad_geometry(kwargs):
    with pytest.raises(ValidationError):
        GridSpec(**kwargs)


def test_energy_assembly():
    e = EnergyBreakdown.assemble(norm_a_sq=2.0, V1=-3.0, V2=1.0, log_norm_sq=0.5)
    assert e.V0 == -2.0
    assert e.phi == pytest.approx(0.5)


def test_bilinear_margins():
    report = BilinearReport(b1=-1.0, b1_bound=2.0, b2=0.5, b2_upper_bound=1.0, b2_lower_bound=-1.0)
    assert report.margins == {"b1": 1.0, "b2_upper": 0.5, "b2_lower": 1.5}
    assert report.holds


def test_fourier_convention_fixed():
    assert SlabParams(ell=1.0).ell == 1.0
    with pytest.raises(ValidationError):
        SlabParams(ell=1.0, fourier_prefactor=1.0)


def test_solver_config_forbids_unknown_keys():
    with pytest.raises(ValidationError):
        SolverConfig(step=0.1)


def test_scan_row_gap():
    assert ScanRow(ell=1.0, c_r=1.5, two_ell_kappa=2.0).gap == pytest.approx(-0.5)
    assert ScanRow(ell=1.0, two_ell_kappa=2.0, status="failed").gap is None
