import numpy as np
import pytest

from chainsolve.fields import (
    Field,
    HelmholtzOperator,
    PotentialSpec,
    convolve_with_table,
    direct_convolution,
    forward_differences,
    gradient_energy,
    interior_mask,
    log_weight_norm,
    lp_norm,
    neg_laplacian,
    neg_laplacian_4th,
    norm_a,
    radius,
    vertical_coordinates,
)
from chainsolve.resilience import ConfigError, GridError, LinearSolveError
from chainsolve.schemas import GridSpec, SymmetryTag


def test_field_validates_shape_and_values(small_grid):
    with pytest.raises(GridError):
        Field(small_grid, np.zeros((3, 3, 3)))
    bad = np.zeros(small_grid.shape)
    bad[0, 0, 0] = np.nan
    with pytest.raises(GridError):
        Field(small_grid, bad)


def test_field_values_are_read_only(small_grid):
    u = Field(small_grid, np.zeros(small_grid.shape))
    with pytest.raises(ValueError):
        u.values[0, 0, 0] = 1.0


def test_extend_planar_field(small_grid):
    planar = Field(small_grid, np.ones(small_grid.planar_shape))
    assert planar.is_planar
    slab = planar.extend()
    assert slab.values.shape == small_grid.shape
    assert slab.symmetry == SymmetryTag.PLANAR_CONSTANT
    with pytest.raises(GridError):
        slab.extend()


def test_field_arithmetic_checks_grids(small_grid):
    u = Field(small_grid, np.ones(small_grid.shape))
    other = Field(small_grid.with_ell(2.0), np.ones(small_grid.shape))
    np.testing.assert_array_equal((u + u).values, 2.0)
    np.testing.assert_array_equal((-u).values, -1.0)
    with pytest.raises(GridError):
        u - other


@pytest.mark.parametrize("planar", [False, True])
def test_difference_pair_is_adjoint(small_grid, rng, planar):
    shape = small_grid.planar_shape if planar else small_grid.shape
    u, v = rng.normal(size=shape), rng.normal(size=shape)
    lhs = np.sum(neg_laplacian(u, small_grid) * v)
    rhs = sum(np.sum(du * dv) for du, dv in zip(forward_differences(u, small_grid), forward_differences(v, small_grid)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_fourth_order_laplacian_on_smooth_field():
    small_grid = GridSpec(L=4.0, n_x=32, ell=1.0, n_z=16)
    x = -small_grid.L + (np.arange(small_grid.n_x) + 0.5) * small_grid.h_x
    z = vertical_coordinates(small_grid)
    u = np.exp(-x[:, None, None] ** 2 - x[None, :, None] ** 2) * np.cos(np.pi * z / small_grid.ell)[None, None, :]
    exact = -u * (4.0 * x[:, None, None] ** 2 - 2.0 + 4.0 * x[None, :, None] ** 2 - 2.0 - (np.pi / small_grid.ell) ** 2)
    mask = interior_mask(small_grid, 0.5)
    second = np.abs(neg_laplacian(u, small_grid) - exact)[mask].max()
    fourth = np.abs(neg_laplacian_4th(u, small_grid) - exact)[mask].max()
    assert fourth < second


def test_potential_rejects_nonpositive_minimum():
    with pytest.raises(ConfigError):
        PotentialSpec.radial_well(1.0, 1.0, 1.0)
    with pytest.raises(ConfigError):
        PotentialSpec.constant(0.0)


def test_potential_samples(small_grid):
    a = PotentialSpec.radial_well(2.0, 1.0, 1.5)
    values = a.sample(small_grid)
    assert values.shape == small_grid.shape
    assert values.min() >= a.a_min
    assert np.ptp(values, axis=2).max() == 0.0
    assert a.sample(small_grid, planar=True).shape == small_grid.planar_shape


def test_helmholtz_fast_solver_is_exact(small_grid, rng):
    op = HelmholtzOperator(small_grid, np.full(small_grid.shape, 1.5))
    f = rng.normal(size=small_grid.shape)
    np.testing.assert_allclose(op.apply(op.solve(f)), f, atol=1e-10)


def test_helmholtz_cg_for_variable_coefficient(small_grid, rng, well_potential):
    op = HelmholtzOperator(small_grid, well_potential.sample(small_grid))
    assert not op.constant
    f = rng.normal(size=small_grid.shape)
    np.testing.assert_allclose(op.apply(op.solve(f)), f, atol=1e-9 * np.abs(f).max())


def test_helmholtz_cg_failure_raises(small_grid, rng, well_potential):
    op = HelmholtzOperator(small_grid, well_potential.sample(small_grid), rtol=1e-14, maxiter=1)
    with pytest.raises(LinearSolveError) as info:
        op.solve(rng.normal(size=small_grid.shape))
    assert info.value.residual > 0.0


def test_norms(gaussian):
    a = PotentialSpec.constant(2.0)
    assert norm_a(gaussian, a) ** 2 == pytest.approx(2.0 * lp_norm(gaussian, 2.0) ** 2 + gradient_energy(gaussian), rel=1e-12)
    assert lp_norm(gaussian, np.inf) == pytest.approx(np.abs(gaussian.values).max())
    with pytest.raises(ValueError):
        lp_norm(gaussian, 0.5)


def test_log_weight_norm(small_grid, gaussian):
    assert log_weight_norm(Field(small_grid, np.zeros(small_grid.shape))) == 0.0
    assert log_weight_norm(gaussian.replace(2.0 * gaussian.values)) == pytest.approx(2.0 * log_weight_norm(gaussian), rel=1e-12)

    spike = np.zeros(small_grid.shape)
    spike[12, 3, 6] = 1.0
    r = radius(small_grid)[12, 3, 6]
    expected = np.sqrt(small_grid.cell_volume * np.log1p(r))
    assert log_weight_norm(Field(small_grid, spike)) == pytest.approx(expected, rel=1e-12)


def test_fft_convolution_matches_direct_sum(small_table, small_grid, rng):
    f = Field(small_grid, rng.uniform(-1.0, 1.0, size=small_grid.shape))
    fast = convolve_with_table(f, small_table).values
    direct = direct_convolution(f, small_table)
    assert np.abs(fast - direct).max() <= 1e-10 * np.abs(direct).max()


def test_convolution_parts_add_up(small_table, gaussian):
    total = convolve_with_table(gaussian, small_table).values
    parts = convolve_with_table(gaussian, small_table, "k1").values + convolve_with_table(gaussian, small_table, "k2").values
    np.testing.assert_allclose(total, parts, atol=1e-12 * np.abs(total).max())


def test_convolution_keeps_symmetry_tags(small_table, gaussian, small_grid):
    assert convolve_with_table(gaussian, small_table).symmetry == SymmetryTag.PLANAR_CONSTANT
    with pytest.raises(GridError):
        convolve_with_table(Field(small_grid, np.ones(small_grid.planar_shape)), small_table)
    with pytest.raises(GridError):
        convolve_with_table(Field(small_grid.with_ell(2.0), gaussian.values), small_table)
