"""
The Green operator w = K[u^2] and the checks built on it.

The kernel-table convolution is the only primary path; the per-mode spectral path is
a cross-check for densities whose planar mean vanishes at every x3.
"""

from __future__ import annotations

import functools
import logging
import math

import numpy as np
import scipy.fft
from numpy.typing import NDArray

from chainsolve.fields import (
    Field,
    HelmholtzOperator,
    PotentialSpec,
    convolve_with_table,
    interior_mask,
    log_weight_norm,
    neg_laplacian,
    neg_laplacian_4th,
    norm_a,
    radius,
    vertical_coordinates,
)
from chainsolve.kernel import (
    FOUR_PI,
    KernelTable,
    box_average_k1,
    build_kernel_table,
    lattice_indices,
    ode_apply,
    square_average_log,
)
from chainsolve.resilience import GridError, SupportError
from chainsolve.schemas import GridSpec, NewtonianRow, PairReport, SymmetryTag

logger = logging.getLogger(__name__)

INTERIOR_FRACTION = 0.7


def apply_green(u2: Field, table: KernelTable) -> Field:
    """w = K[u2], the potential solving Lap w = u2 with log growth"""
    return convolve_with_table(u2, table)


def _interior_ratio(residual: NDArray, reference: NDArray, mask: NDArray) -> float:
    num = float(np.linalg.norm(residual[mask]))
    den = float(np.linalg.norm(reference[mask]))
    if den == 0.0:
        return num
    return num / den


def poisson_residual(w: Field, u2: Field, fraction: float = INTERIOR_FRACTION) -> float:
    """||Lap_h w - u2|| / ||u2|| on the interior subdomain"""
    if w.grid != u2.grid or w.values.shape != u2.values.shape:
        raise GridError("poisson_residual needs fields on the same grid")
    residual = -neg_laplacian(w.values, w.grid) - u2.values
    return _interior_ratio(residual, u2.values, interior_mask(w.grid, fraction, planar=w.is_planar))


def discrete_poisson_solve(u2: Field) -> Field:
    """Exact solution of Lap_h w = u2 with zero extension in x' and periodic x3"""
    operator = HelmholtzOperator(u2.grid, np.zeros(u2.values.shape))
    return u2.replace(operator.precondition(-u2.values), SymmetryTag.GENERAL)


# --- planar log kernel -------------------------------------------------------


def planar_log_table(grid: GridSpec, near_field_cells: int = 3) -> NDArray:
    """
    (1/2pi) log|x'| on the zero-padded planar lattice, shape (2N, 2N) in FFT order.

    Offsets with max(|i|,|j|) <= near_field_cells hold exact cell averages, the same
    near field used by the slab table, so x3-sums of the slab table reproduce it.
    """
    n, h = grid.n_x, grid.h_x
    a = np.arange(n + 1)
    with np.errstate(divide="ignore"):
        canonical = np.log(h * np.hypot(a[:, None], a[None, :])) / (2.0 * math.pi)
    p = min(near_field_cells, n)
    cells = np.arange(p + 1) * h
    canonical[: p + 1, : p + 1] = square_average_log((cells[:, None], cells[None, :]), h)

    planar = lattice_indices(2 * n)
    i = np.maximum(planar[:, None], planar[None, :])
    j = np.minimum(planar[:, None], planar[None, :])
    return canonical[i, j]


@functools.lru_cache(maxsize=16)
def _planar_log_spectrum(grid: GridSpec, near_field_cells: int) -> NDArray:
    spectrum = scipy.fft.rfftn(planar_log_table(grid, near_field_cells))
    spectrum.setflags(write=False)
    return spectrum


def planar_log_potential(u2_planar: Field, near_field_cells: int = 3) -> Field:
    """Integral of (1/2pi) log|x' - y'| u2(y') dy' over the plane"""
    if not u2_planar.is_planar:
        raise GridError("planar_log_potential needs a planar field")
    grid = u2_planar.grid
    n = grid.n_x
    spec = scipy.fft.rfftn(u2_planar.values, s=(2 * n, 2 * n))
    out = scipy.fft.irfftn(spec * _planar_log_spectrum(grid, near_field_cells), s=(2 * n, 2 * n))[:n, :n]
    symmetry = SymmetryTag.RADIAL if u2_planar.symmetry == SymmetryTag.RADIAL else SymmetryTag.GENERAL
    return Field(grid, out * grid.cell_area, symmetry)


# --- cross-checks ------------------------------------------------------------


def spectral_green_apply(u2: Field, padding: int = 4) -> Field:
    """
    Per-mode evaluation of K[u2] for densities with zero planar mean at every x3.

    Planar FFT on a box padded by `padding`, then 2 pi * H_rho per nonzero mode.
    The zero planar mode is not invertible and must vanish.
    """
    if u2.is_planar:
        raise GridError("spectral_green_apply needs a 3D field")
    grid = u2.grid
    n = grid.n_x
    m = padding * n
    spec = scipy.fft.fftn(u2.values, s=(m, m), axes=(0, 1))
    scale = float(np.abs(spec).max(initial=0.0))
    if scale > 0.0 and np.abs(spec[0, 0, :]).max() > 1e-10 * scale:
        raise GridError("spectral path needs zero planar mean at every x3")
    freq = 2.0 * math.pi * scipy.fft.fftfreq(m, d=grid.h_x)
    rho = np.hypot(freq[:, None], freq[None, :])
    rho[0, 0] = 1.0
    spec[0, 0, :] = 0.0
    modes = 2.0 * math.pi * ode_apply(rho, grid.ell, spec, axis=2)
    out = scipy.fft.ifftn(modes, axes=(0, 1)).real[:n, :n, :]
    return Field(grid, out)


def growth_constant(w: Field, u: Field, a: PotentialSpec) -> float:
    """Smallest C with |w(x)| <= [C + log(1+|x|)] ||u||_X^2 on the grid"""
    x_norm_sq = norm_a(u, a) ** 2 + log_weight_norm(u) ** 2
    if x_norm_sq == 0.0:
        return 0.0
    excess = np.abs(w.values) / x_norm_sq - np.log1p(radius(w.grid, planar=w.is_planar))
    return float(excess.max())


def choquard_residual(u: Field, a: PotentialSpec, w: Field, fraction: float = INTERIOR_FRACTION) -> float:
    """||-Lap u + a u + w u|| / ||u|| on the interior, fourth-order Laplacian"""
    a_values = a.sample(u.grid, planar=u.is_planar)
    residual = neg_laplacian_4th(u.values, u.grid) + a_values * u.values + w.values * u.values
    return _interior_ratio(residual, u.values, interior_mask(u.grid, fraction, planar=u.is_planar))


def poisson_pair(u: Field, a: PotentialSpec, table: KernelTable) -> tuple[Field, PairReport]:
    """The pair (u, w = K[u^2]) with residuals of both equations and the growth constant"""
    u2 = u.replace(u.values**2)
    w = apply_green(u2, table)
    report = PairReport(
        choquard_residual=choquard_residual(u, a, w),
        poisson_residual=poisson_residual(w, u2),
        growth_constant=growth_constant(w, u, a),
    )
    return w, report


# --- free-space limit --------------------------------------------------------


def bump_field(grid: GridSpec, support_radius: float) -> Field:
    """phi = (1 - |x|^2/r^2)_+^2, compactly supported around the origin"""
    r = radius(grid)
    values = np.clip(1.0 - (r / support_radius) ** 2, 0.0, None) ** 2
    return Field(grid, values, SymmetryTag.RADIAL)


def vertical_extent(phi: Field) -> float:
    """Largest |x3| carrying a nonzero sample"""
    nonzero = np.any(phi.values != 0.0, axis=(0, 1))
    if not np.any(nonzero):
        return 0.0
    return float(np.abs(vertical_coordinates(phi.grid)[nonzero]).max())


def embed_field(phi: Field, ell: float) -> Field:
    """Place phi on the slab of half-period ell with the same spacings"""
    h_z = phi.grid.h_z
    n_z = int(round(2.0 * ell / h_z))
    if abs(n_z * h_z - 2.0 * ell) > 1e-9 * ell or n_z % 2 or n_z < 8:
        raise GridError(f"ell={ell} needs an even number (>= 8) of x3 cells of size {h_z}")
    extent = vertical_extent(phi)
    if extent + 0.5 * h_z > ell:
        raise SupportError(extent + 0.5 * h_z, ell)

    grid = phi.grid.with_ell(ell, n_z)
    values = np.zeros(grid.shape)
    z_ref = vertical_coordinates(phi.grid)
    keep = np.abs(z_ref) <= extent
    target = np.rint((z_ref[keep] + ell) / h_z).astype(int)
    values[:, :, target] = phi.values[:, :, keep]
    return Field(grid, values, phi.symmetry)


def free_space_newton_energy(phi: Field, near_field_cells: int = 3) -> float:
    """-(1/4pi) double integral of phi^2(x) phi^2(y) / |x - y| by zero-padded 3D FFT"""
    grid = phi.grid
    n, nz = grid.n_x, grid.n_z
    h, hz = grid.h_x, grid.h_z
    planar = lattice_indices(2 * n)
    vertical = lattice_indices(2 * nz)
    pi_, pj_ = planar[:, None, None], planar[None, :, None]
    a = np.maximum(pi_, pj_)
    b = np.minimum(pi_, pj_)
    k = vertical[None, None, :]
    with np.errstate(divide="ignore"):
        kernel = -1.0 / (FOUR_PI * np.sqrt((a * h) ** 2 + (b * h) ** 2 + (k * hz) ** 2))
    near = np.broadcast_to(a <= near_field_cells, kernel.shape)
    averages = box_average_k1((a * h, b * h, k * hz), (h, h, hz))
    kernel = np.where(near, averages, kernel)

    density = phi.values**2
    shape = (2 * n, 2 * n, 2 * nz)
    spec = scipy.fft.rfftn(density, s=shape) * scipy.fft.rfftn(kernel)
    potential = scipy.fft.irfftn(spec, s=shape)[:n, :n, :nz] * grid.cell_volume
    return float(grid.cell_volume * np.sum(density * potential))


def slab_newton_energy(phi: Field, table: KernelTable) -> float:
    """D = double integral of K(x, y) phi^2(x) phi^2(y) on the slab"""
    density = phi.replace(phi.values**2)
    return float(phi.cell_measure * np.sum(density.values * apply_green(density, table).values))


def newtonian_limit_experiment(phi: Field, ell_list: list[float], near_field_cells: int = 3) -> list[NewtonianRow]:
    """
    Slab energies D(ell) of a fixed compact bump against the free-space value D_inf.

    D(ell) - D_inf is led by M^2 times the regular part of K at the origin, which
    behaves like log(ell / ell_0) / (4 pi ell) with ell_0 fixed by the unit length of
    the planar log kernel. The relative error therefore decays like r log(ell) / ell
    and vanishes near ell_0 by cancellation, so the decay is only visible on
    windows that start well above ell_0.

    Raises:
        SupportError: phi does not fit inside one of the slabs
        GridError: an ell is not a whole even number of x3 cells
    """
    embedded = [embed_field(phi, ell) for ell in ell_list]
    d_inf = free_space_newton_energy(phi, near_field_cells)
    rows = []
    for ell, field in zip(ell_list, embedded):
        table = build_kernel_table(field.grid, near_field_cells)
        d_ell = slab_newton_energy(field, table)
        rel_err = 0.0 if d_inf == 0.0 else abs(d_ell - d_inf) / abs(d_inf)
        logger.info(f"Newtonian limit ell={ell}: D={d_ell:.6e} D_inf={d_inf:.6e} rel_err={rel_err:.3e}")
        rows.append(NewtonianRow(ell=ell, D_ell=d_ell, D_inf=d_inf, rel_err=rel_err))
    return rows


def newtonian_bump(support_radius: float = 1.0, cells_per_radius: int = 5) -> Field:
    """Compact bump on the smallest slab holding it: L = r + h, ell = 2r, h_z = h"""
    h = support_radius / cells_per_radius
    grid = GridSpec(
        L=support_radius + h,
        n_x=2 * (cells_per_radius + 1),
        ell=2.0 * support_radius,
        n_z=4 * cells_per_radius,
    )
    return bump_field(grid, support_radius)
