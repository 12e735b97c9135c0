import numpy as np
import pytest

from chainsolve.calibration import calibrated_table
from chainsolve.fields import Field, planar_radius_sq
from chainsolve.kernel import KernelTable
from chainsolve.resilience import GridError
from chainsolve.schemas import SymmetryTag
from chainsolve.symmetry import sigma_apply
from chainsolve.variational import (
    B1_CONSTANT,
    HLS_CONSTANT,
    VariationalProblem,
    bilinear_checks,
    energy,
    fiber_profile,
    gradient,
    mountain_radius,
    nehari_scale,
    random_smooth_field,
)


@pytest.fixture
def spike(small_grid):
    """One-cell field; its quartic part is dominated by the negative self term"""
    values = np.zeros(small_grid.shape)
    values[8, 8, 4] = 1.0
    return Field(small_grid, values)


@pytest.fixture
def problem(small_table, unit_potential):
    return VariationalProblem.slab(unit_potential, small_table)


def test_hls_constant():
    assert HLS_CONSTANT == pytest.approx(2.29401, abs=1e-4)
    assert B1_CONSTANT == pytest.approx(3.0 * HLS_CONSTANT / (4.0 * np.pi))


def test_energy_parts(problem, gaussian, unit_potential, small_table):
    e = problem.energy(gaussian)
    assert e.V0 == pytest.approx(e.V1 + e.V2)
    assert e.phi == pytest.approx(0.5 * e.norm_a_sq + 0.25 * e.V0)
    assert e.V1 < 0.0
    assert energy(gaussian, unit_potential, small_table) == e


def test_nehari_rescale(problem, spike, unit_potential, small_table):
    scale = nehari_scale(spike, unit_potential, small_table)
    assert scale.defined
    on_manifold = spike.scaled(scale.t_u)
    assert problem.nehari_residual(on_manifold) < 1e-12
    assert problem.energy(on_manifold).phi > 0.0


def test_nehari_scale_undefined_without_quartic_part(small_grid, spike, unit_potential):
    scale = nehari_scale(spike, unit_potential, KernelTable.zeros(small_grid))
    assert not scale.defined
    assert scale.t_u == 0.0


def test_fiber_maximum_at_one(problem, spike, unit_potential, small_table):
    u = spike.scaled(problem.nehari_scale(spike).t_u)
    t = [0.5, 0.9, 1.0, 1.1, 2.0]
    profile = fiber_profile(u, t, unit_potential, small_table)
    assert int(np.argmax(profile)) == 2
    assert profile[2] == pytest.approx(problem.phi(u), rel=1e-12)


def test_gradient_matches_central_differences(problem, gaussian, rng, small_grid):
    v = Field(small_grid, rng.normal(size=small_grid.shape))
    eps = 1e-4
    numeric = (problem.phi(gaussian + v.scaled(eps)) - problem.phi(gaussian - v.scaled(eps))) / (2.0 * eps)
    assert problem.derivative(gaussian, v) == pytest.approx(numeric, rel=1e-6)
    assert problem.inner(problem.gradient(gaussian), v) == pytest.approx(numeric, rel=1e-6)


def test_gradient_is_orthogonal_on_nehari(problem, spike, unit_potential, small_table):
    u = spike.scaled(problem.nehari_scale(spike).t_u)
    g = gradient(u, unit_potential, small_table)
    assert abs(problem.inner(g, u)) < 1e-10 * problem.norm_sq(u)


def test_gradient_with_variable_potential(small_table, well_potential, gaussian, rng, small_grid):
    problem = VariationalProblem.slab(well_potential, small_table)
    v = Field(small_grid, rng.normal(size=small_grid.shape))
    assert problem.inner(problem.gradient(gaussian), v) == pytest.approx(problem.derivative(gaussian, v), rel=1e-8)


def test_planar_problem_has_no_newton_part(small_grid, unit_potential):
    problem = VariationalProblem.plane(unit_potential, small_grid)
    planar = Field(small_grid, np.exp(-np.add.outer(np.arange(16) - 7.5, np.zeros(16)) ** 2 / 4.0))
    e = problem.energy(planar)
    assert e.V1 == 0.0
    assert e.V2 != 0.0


def test_problem_rejects_wrong_field(problem, small_grid):
    with pytest.raises(GridError):
        problem.energy(Field(small_grid, np.ones(small_grid.planar_shape)))


def test_bilinear_estimates_hold(small_table, gaussian, rng, small_grid):
    v = random_smooth_field(small_grid, rng)
    report = bilinear_checks(gaussian, v, small_table)
    assert report.holds, report.margins
    assert report.constants["C1"] == B1_CONSTANT


def test_mountain_radius(small_table, unit_potential):
    report = mountain_radius(unit_potential, small_table, samples=10)
    assert report.beta > 0.0
    assert report.min_phi > 0.0
    assert report.min_nehari_derivative > 0.0


def test_energy_is_sigma_invariant(problem, rng, small_grid):
    u = random_smooth_field(small_grid, rng)
    shifted = sigma_apply(u)
    assert problem.phi(shifted) == pytest.approx(problem.phi(u), rel=1e-12)
    g = problem.gradient(u)
    np.testing.assert_allclose(problem.gradient(shifted).values, sigma_apply(g).values, atol=1e-12 * np.abs(g.values).max())


def test_quartic_part_is_homogeneous(problem, rng, small_grid):
    u = random_smooth_field(small_grid, rng)
    v0 = problem.energy(u).V0
    assert problem.energy(u.scaled(1.7)).V0 == pytest.approx(1.7**4 * v0, rel=1e-12)
    assert problem.norm_sq(u.scaled(1.7)) == pytest.approx(1.7**2 * problem.norm_sq(u), rel=1e-12)


def test_extension_energy_is_a_multiple_of_the_planar_energy(small_grid, unit_potential):
    table = calibrated_table(small_grid)
    planar = Field(small_grid, np.exp(-planar_radius_sq(small_grid) / 1.5**2), SymmetryTag.RADIAL)
    slab = VariationalProblem.slab(unit_potential, table).energy(planar.extend())
    plane = VariationalProblem.plane(unit_potential, small_grid).energy(planar)
    two_ell = 2.0 * small_grid.ell
    assert slab.norm_a_sq == pytest.approx(two_ell * plane.norm_a_sq, rel=1e-12)
    assert slab.phi == pytest.approx(two_ell * plane.phi, rel=1e-3)
