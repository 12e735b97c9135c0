from types import SimpleNamespace

import numpy as np
import pytest

from chainsolve import solver
from chainsolve.fields import Field, PotentialSpec, coordinates
from chainsolve.kernel import KernelTable
from chainsolve.resilience import ConfigError, ConvergenceError, GridError, NoNehariSeedError
from chainsolve.schemas import ScanRow, SolverConfig, SymmetryTag
from chainsolve.symmetry import radialize, symmetry_defect
from chainsolve.variational import VariationalProblem, random_smooth_field
from chainsolve.verify import _scan_verdict


@pytest.mark.parametrize("symmetry", ["radial", "g_invariant", "planar"])
def test_seed_field_classes(small_grid, symmetry):
    config = SolverConfig(symmetry=symmetry)
    u = solver.seed_field(small_grid, config, 1.0, 0.5, np.random.default_rng(0))
    assert u.values.shape == small_grid.shape
    if symmetry == "g_invariant":
        assert symmetry_defect(u, SymmetryTag.G_INVARIANT) < 1e-12
    if symmetry == "planar":
        assert symmetry_defect(u, SymmetryTag.PLANAR_CONSTANT) == 0.0


def test_planar_seed(small_grid):
    u = solver.seed_field(small_grid, SolverConfig(), 1.0, 1.0, np.random.default_rng(0), planar=True)
    assert u.is_planar


def test_g_class_needs_x3_independent_potential(small_table):
    tilted = PotentialSpec(lambda r2, z: 2.0 + 0.5 * np.cos(np.pi * z) + 0.0 * r2, 1.5, x3_independent=False)
    with pytest.raises(ConfigError):
        solver.ground_state(SolverConfig(symmetry="g_invariant"), tilted, small_table)


def test_no_seed_without_quartic_part(small_grid, unit_potential):
    config = SolverConfig(restarts=1, max_width_halvings=2)
    with pytest.raises(NoNehariSeedError):
        solver.ground_state(config, unit_potential, KernelTable.zeros(small_grid))


def test_iteration_limit_raises_with_trace(small_table, unit_potential):
    config = SolverConfig(restarts=1, max_iters=1, tol_g=1e-14)
    with pytest.raises(ConvergenceError) as info:
        solver.ground_state(config, unit_potential, small_table)
    assert info.value.iterations == 1


def test_residual_of_zero_field(small_grid, small_table, unit_potential):
    assert solver.residual_report(Field(small_grid, np.zeros(small_grid.shape)), unit_potential, small_table) == 0.0


def test_symmetry_breaking_bound(small_grid, unit_potential):
    x1, x2, x3 = coordinates(small_grid)
    bump = Field(small_grid, np.exp(-(x1**2 + x2**2 + x3**2)))
    bound = solver.symmetry_breaking_bound(bump, unit_potential, 0.5)
    assert bound > 0.0
    assert solver.symmetry_breaking_bound(bump, unit_potential, 1.0) == pytest.approx(0.5 * bound)
    with pytest.raises(GridError):
        solver.symmetry_breaking_bound(bump, unit_potential, 0.0)
    with pytest.raises(GridError):
        solver.symmetry_breaking_bound(Field(small_grid, np.zeros(small_grid.shape)), unit_potential, 0.5)


@pytest.fixture
def fake_scan(monkeypatch):
    """Scan plumbing with the solves replaced: c_r drops below 2 ell kappa from ell = 2 on"""
    calls = []

    def fake_planar(config, a, grid, near_field_cells=3):
        return SimpleNamespace(energy=SimpleNamespace(phi=1.0), field=None)

    def fake_row(ell, config, a, grid, planar, kappa, near_field_cells, kernel_options):
        calls.append(ell)
        if ell == 3.0:
            raise ConvergenceError(10, 0.1)
        gap = -0.1 if ell >= 2.0 else 0.0
        return ScanRow(ell=ell, c_r=2.0 * ell * kappa + gap, c_G=2.0 * ell * kappa, two_ell_kappa=2.0 * ell * kappa)

    monkeypatch.setattr(solver, "planar_ground_state", fake_planar)
    monkeypatch.setattr(solver, "_scan_row", fake_row)
    return calls


def test_ell_scan_rows_and_transition(fake_scan, small_grid, unit_potential):
    seen = []
    result = solver.ell_scan([4.0, 1.0, 3.0, 2.0], SolverConfig(), unit_potential, small_grid, on_row=seen.append)
    assert result.kappa == 1.0
    assert [r.ell for r in result.rows] == [1.0, 2.0, 3.0, 4.0]
    assert result.rows[2].status == "failed"
    assert result.rows[2].two_ell_kappa == 6.0
    assert result.ell_star == 2.0
    assert result.ell_bound is not None and result.ell_bound > 0.0
    assert len(seen) == 4


def test_ell_scan_keeps_completed_rows(fake_scan, small_grid, unit_potential):
    done = ScanRow(ell=1.0, c_r=1.5, two_ell_kappa=2.0)
    result = solver.ell_scan([1.0, 2.0], SolverConfig(), unit_potential, small_grid, completed=[done], max_workers=2)
    assert fake_scan == [2.0]
    assert result.rows[0] == done
    assert result.ell_star == 1.0


def test_ell_scan_without_transition(fake_scan, small_grid, unit_potential):
    result = solver.ell_scan([1.0], SolverConfig(), unit_potential, small_grid)
    assert result.ell_star is None


def test_ell_scan_needs_x3_independent_potential(small_grid):
    tilted = PotentialSpec(lambda r2, z: 2.0 + 0.0 * r2 + 0.0 * z, 2.0, x3_independent=False)
    with pytest.raises(ConfigError):
        solver.ell_scan([1.0], SolverConfig(), tilted, small_grid)


def test_radial_ground_state_converges(small_table, unit_potential):
    report = solver.ground_state(SolverConfig(tol_g=1e-6, restarts=2), unit_potential, small_table)
    assert report.grad_norm < 1e-6
    assert report.nehari_residual < 1e-10
    assert report.energy.phi > 0.0
    assert report.restart_dispersion < 1e-6
    assert report.sign_pair_phi == pytest.approx(report.energy.phi, rel=1e-12)
    assert report.field.symmetry == SymmetryTag.RADIAL
    assert symmetry_defect(report.field, SymmetryTag.RADIAL) < 1e-12


def test_descent_is_monotone_on_the_nehari_manifold(small_table, unit_potential):
    report = solver.ground_state(SolverConfig(tol_g=1e-6, restarts=1), unit_potential, small_table)
    phis = [row.phi for row in report.trace]
    assert len(phis) > 1
    assert all(later < earlier for earlier, later in zip(phis, phis[1:]))
    assert all(row.nehari_residual < 1e-10 for row in report.trace)


def test_plain_descent_converges(small_table, unit_potential):
    config = SolverConfig(tol_g=1e-6, restarts=1, momentum=False, max_iters=5000)
    report = solver.ground_state(config, unit_potential, small_table)
    assert report.grad_norm < 1e-6


def test_class_gradient_represents_the_restricted_derivative(small_table, unit_potential, rng):
    problem = VariationalProblem.slab(unit_potential, small_table)
    u = radialize(random_smooth_field(small_table.grid, rng))
    v = radialize(random_smooth_field(small_table.grid, rng))
    g = problem.class_gradient(u, radialize)
    assert problem.inner(g, v) == pytest.approx(problem.derivative(u, v), rel=1e-9)
    full = problem.class_gradient(u, lambda f: f)
    np.testing.assert_allclose(full.values, problem.gradient(u).values, atol=1e-10 * np.abs(full.values).max())


def test_failed_solve_becomes_a_failed_row(monkeypatch, small_grid, unit_potential):
    zero = Field(small_grid, np.zeros(small_grid.planar_shape))

    def fake_planar(config, a, grid, near_field_cells=3):
        return SimpleNamespace(energy=SimpleNamespace(phi=1.0), field=zero)

    def fake_ground_state(config, a, table, initial=None):
        if table.grid.ell == 2.0:
            raise ConvergenceError(7, 1e-3)
        field = Field(table.grid, np.zeros(table.grid.shape))
        return SimpleNamespace(energy=SimpleNamespace(phi=1.5), d3_fraction=0.0, field=field)

    monkeypatch.setattr(solver, "planar_ground_state", fake_planar)
    monkeypatch.setattr(solver, "calibrated_table", lambda grid, near_field_cells=3, **kwargs: KernelTable.zeros(grid))
    monkeypatch.setattr(solver, "ground_state", fake_ground_state)

    result = solver.ell_scan([1.0, 2.0], SolverConfig(), unit_potential, small_grid)
    ok, failed = result.rows
    assert ok.status == "ok" and ok.c_r == 1.5
    assert failed.status == "failed"
    assert failed.ell == 2.0 and failed.two_ell_kappa == 4.0
    assert "ConvergenceError" in failed.error
    below, _, _ = _scan_verdict(result)
    assert not below


@pytest.mark.slow
def test_planar_ground_state(small_grid, unit_potential):
    report = solver.planar_ground_state(SolverConfig(tol_g=1e-5), unit_potential, small_grid)
    assert report.symmetry == "planar"
    assert report.field.is_planar
    assert report.energy.V1 == 0.0
    assert report.grad_norm < 1e-5
