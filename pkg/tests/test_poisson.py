import numpy as np
import pytest

from chainsolve.calibration import gaussian_density
from chainsolve.fields import Field, coordinates, radius
from chainsolve.poisson import (
    apply_green,
    discrete_poisson_solve,
    embed_field,
    newtonian_bump,
    newtonian_limit_experiment,
    planar_log_potential,
    poisson_pair,
    poisson_residual,
    spectral_green_apply,
    vertical_extent,
)
from chainsolve.resilience import GridError, SupportError
from chainsolve.schemas import SymmetryTag


def test_discrete_poisson_solve_is_exact(small_grid, gaussian):
    u2 = gaussian.replace(gaussian.values**2)
    w = discrete_poisson_solve(u2)
    assert poisson_residual(w, u2) < 1e-10


def test_green_operator_solves_poisson(small_table, small_grid):
    u2 = gaussian_density(small_grid, 2.5).extend()
    w = apply_green(u2, small_table)
    assert poisson_residual(w, u2) < 0.1


def test_poisson_residual_needs_matching_fields(small_grid, gaussian):
    with pytest.raises(GridError):
        poisson_residual(gaussian, Field(small_grid.with_ell(2.0), gaussian.values))


def test_planar_log_potential(small_grid, gaussian):
    with pytest.raises(GridError):
        planar_log_potential(gaussian)

    density = gaussian_density(small_grid, 1.5)
    w = planar_log_potential(density)
    assert w.is_planar
    assert w.symmetry == SymmetryTag.RADIAL
    np.testing.assert_allclose(w.values, w.values.T, rtol=0, atol=1e-12 * np.abs(w.values).max())
    np.testing.assert_allclose(planar_log_potential(density.replace(3.0 * density.values)).values, 3.0 * w.values, rtol=1e-12)

    r = radius(small_grid, planar=True)
    assert w.values[np.unravel_index(r.argmax(), r.shape)] > w.values[np.unravel_index(r.argmin(), r.shape)]


def test_spectral_path_rejects_planar_mean(small_grid, gaussian):
    with pytest.raises(GridError):
        spectral_green_apply(gaussian)
    with pytest.raises(GridError):
        spectral_green_apply(Field(small_grid, np.ones(small_grid.planar_shape)))


def test_spectral_path_preserves_oddness(small_grid):
    x1, x2, x3 = coordinates(small_grid)
    values = x1 * np.exp(-(x1**2 + x2**2)) * (1.0 + 0.5 * np.cos(np.pi * x3 / small_grid.ell))
    w = spectral_green_apply(Field(small_grid, values)).values
    np.testing.assert_allclose(w[::-1], -w, atol=1e-12 * np.abs(w).max())
    assert np.abs(w).max() > 0.0


def test_poisson_pair_report(small_table, gaussian, unit_potential):
    w, report = poisson_pair(gaussian, unit_potential, small_table)
    assert w.values.shape == gaussian.values.shape
    assert report.poisson_residual < 0.5
    assert np.isfinite(report.choquard_residual)
    assert np.isfinite(report.growth_constant)


def test_bump_embedding():
    phi = newtonian_bump(0.03, 5)
    assert vertical_extent(phi) == pytest.approx(0.024)
    with pytest.raises(SupportError):
        embed_field(phi, 0.024)
    with pytest.raises(GridError):
        embed_field(phi, 0.027)
    wide = embed_field(phi, 0.12)
    assert wide.grid.n_z == 40
    assert wide.values.sum() == pytest.approx(phi.values.sum(), rel=1e-12)


@pytest.mark.slow
def test_newtonian_limit_improves_with_ell():
    phi = newtonian_bump(0.03, 5)
    rows = newtonian_limit_experiment(phi, [0.06, 0.12, 0.24, 0.48])
    errors = [r.rel_err for r in rows]
    assert errors[0] > errors[1] > errors[2] > errors[3]
    assert errors[3] < 0.02
    assert all(r.D_inf < 0.0 for r in rows)


def test_green_operator_is_self_adjoint(small_table, small_grid, rng):
    f = Field(small_grid, rng.normal(size=small_grid.shape))
    g = Field(small_grid, rng.normal(size=small_grid.shape))
    left = float(np.sum(apply_green(f, small_table).values * g.values))
    right = float(np.sum(f.values * apply_green(g, small_table).values))
    assert left == pytest.approx(right, rel=1e-10)


def test_potential_of_a_narrow_bump_changes_sign(small_table, small_grid):
    values = np.zeros(small_grid.shape)
    values[8, 8, 4] = 1.0
    w = apply_green(Field(small_grid, values), small_table)
    assert w.values[8, 8, 4] < 0.0
    assert w.values[0, 0, 0] > 0.0
    assert w.values[0, 0, 4] > 0.0


def test_newtonian_limit_at_unit_scale():
    rows = newtonian_limit_experiment(newtonian_bump(), [2.0, 4.0, 8.0, 16.0])
    errors = [r.rel_err for r in rows]
    assert all(later < earlier for earlier, later in zip(errors, errors[1:]))
