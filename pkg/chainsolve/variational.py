"""
Energy functional Phi(u) = ||u||_a^2 / 2 + V0(u) / 4 and the Nehari manifold.

V0(u) = B(u^2, u^2) with B(f, g) = integral of g(x) K[f](x); V1 and V2 split it by
the kernel parts K1 and K2. On the plane the kernel is (1/2pi) log|x'| and V1 = 0.
"""

from __future__ import annotations

import logging
import math
from typing import Callable

import numpy as np
from scipy.special import gamma

from chainsolve.fields import (
    Field,
    HelmholtzOperator,
    PotentialSpec,
    convolve_with_table,
    coordinates,
    forward_differences,
    log_weight_norm,
    lp_norm,
    vertical_coordinates,
)
from chainsolve.kernel import FOUR_PI, KernelTable
from chainsolve.poisson import planar_log_potential
from chainsolve.resilience import GridError
from chainsolve.schemas import (
    BilinearReport,
    EnergyBreakdown,
    GridSpec,
    KernelMetadata,
    MountainReport,
    NehariScale,
    SymmetryTag,
)

logger = logging.getLogger(__name__)

# Sharp Hardy-Littlewood-Sobolev constant in R^3 for |x|^-1 and exponents 6/5
HLS_CONSTANT = math.sqrt(math.pi) * gamma(1.0) / gamma(2.5) * (gamma(1.5) / gamma(3.0)) ** (-2.0 / 3.0)

# nearest-image distance: direct term plus the two neighbouring images
B1_CONSTANT = 3.0 * HLS_CONSTANT / FOUR_PI


class VariationalProblem:
    """Phi, its gradient and the Nehari rescale for one potential and one kernel"""

    def __init__(
        self,
        grid: GridSpec,
        a: PotentialSpec,
        table: KernelTable | None = None,
        near_field_cells: int = 3,
        cg_rtol: float = 1e-12,
        cg_maxiter: int = 200,
    ):
        self.grid = grid
        self.a = a
        self.table = table
        self.planar = table is None
        self.near_field_cells = near_field_cells
        self.a_values = a.sample(grid, planar=self.planar)
        self.operator = HelmholtzOperator(grid, self.a_values, cg_rtol, cg_maxiter)

    @classmethod
    def slab(cls, a: PotentialSpec, table: KernelTable, **kwargs) -> "VariationalProblem":
        return cls(table.grid, a, table, table.near_field_cells, **kwargs)

    @classmethod
    def plane(cls, a: PotentialSpec, grid: GridSpec, near_field_cells: int = 3, **kwargs) -> "VariationalProblem":
        return cls(grid, a, None, near_field_cells, **kwargs)

    def _check(self, u: Field):
        if u.grid != self.grid or u.is_planar != self.planar:
            raise GridError(f"field on {u.grid} (planar={u.is_planar}) does not match the problem")

    def potential(self, u2: Field, part: str = "total") -> Field:
        """K[u2] (slab) or the planar log potential"""
        if self.planar:
            if part == "k1":
                return u2.replace(np.zeros_like(u2.values))
            return planar_log_potential(u2, self.near_field_cells)
        return convolve_with_table(u2, self.table, part)

    def norm_sq(self, u: Field) -> float:
        grads = sum(np.sum(d * d) for d in forward_differences(u.values, u.grid))
        return float(u.cell_measure * (np.sum(self.a_values * u.values**2) + grads))

    def inner(self, u: Field, v: Field) -> float:
        grads = sum(np.sum(du * dv) for du, dv in zip(forward_differences(u.values, u.grid), forward_differences(v.values, v.grid)))
        return float(u.cell_measure * (np.sum(self.a_values * u.values * v.values) + grads))

    def quartic(self, u: Field) -> tuple[float, float]:
        """(V1, V2)"""
        u2 = u.replace(u.values**2)
        if self.planar:
            return 0.0, float(u.cell_measure * np.sum(u2.values * self.potential(u2).values))
        v1 = float(u.cell_measure * np.sum(u2.values * self.potential(u2, "k1").values))
        v2 = float(u.cell_measure * np.sum(u2.values * self.potential(u2, "k2").values))
        return v1, v2

    def energy(self, u: Field) -> EnergyBreakdown:
        self._check(u)
        v1, v2 = self.quartic(u)
        return EnergyBreakdown.assemble(self.norm_sq(u), v1, v2, log_weight_norm(u) ** 2)

    def phi(self, u: Field) -> float:
        return self.energy(u).phi

    def derivative(self, u: Field, v: Field) -> float:
        """Phi'(u) v"""
        w = self.potential(u.replace(u.values**2))
        return self.inner(u, v) + float(u.cell_measure * np.sum(w.values * u.values * v.values))

    def gradient(self, u: Field) -> Field:
        """g with <g, v>_a = Phi'(u) v: g = u + (-Lap_h + a)^-1 (K[u^2] u)"""
        self._check(u)
        w = self.potential(u.replace(u.values**2))
        correction = self.operator.solve(w.values * u.values)
        return u.replace(u.values + correction)

    def residual_density(self, u: Field) -> Field:
        """r = (-Lap_h + a) u + K[u^2] u, so that Phi'(u) v = integral of r v"""
        self._check(u)
        w = self.potential(u.replace(u.values**2))
        return u.replace(self.operator.apply(u.values) + w.values * u.values, SymmetryTag.GENERAL)

    def class_gradient(self, u: Field, project: Callable[[Field], Field]) -> Field:
        """
        Gradient of Phi restricted to the range of an L2-orthogonal projection P.

        g = (-Lap_h + a)^-1 P r satisfies <g, v>_a = Phi'(u) v for every v with P v = v.
        The ring averages behind the radial classes do not commute with -Lap_h, so
        P applied to the full gradient does not vanish at critical points of the
        restriction; projecting r before the solve does.
        """
        r = project(self.residual_density(u))
        return u.replace(self.operator.solve(r.values), SymmetryTag.GENERAL)

    def nehari_scale(self, u: Field) -> NehariScale:
        energy = self.energy(u)
        if energy.V0 < 0.0 and energy.norm_a_sq > 0.0:
            return NehariScale(t_u=math.sqrt(-energy.norm_a_sq / energy.V0), defined=True)
        return NehariScale(t_u=0.0, defined=False)

    def nehari_residual(self, u: Field) -> float:
        """|Phi'(u) u| / ||u||_a^2"""
        energy = self.energy(u)
        if energy.norm_a_sq == 0.0:
            return 0.0
        return abs(energy.norm_a_sq + energy.V0) / energy.norm_a_sq


def energy(u: Field, a: PotentialSpec, table: KernelTable) -> EnergyBreakdown:
    return VariationalProblem.slab(a, table).energy(u)


def gradient(u: Field, a: PotentialSpec, table: KernelTable) -> Field:
    return VariationalProblem.slab(a, table).gradient(u)


def nehari_scale(u: Field, a: PotentialSpec, table: KernelTable) -> NehariScale:
    """t_u = sqrt(-||u||_a^2 / V0(u)), defined iff V0(u) < 0"""
    return VariationalProblem.slab(a, table).nehari_scale(u)


def fiber_profile(u: Field, t_values, a: PotentialSpec, table: KernelTable) -> list[float]:
    """Phi(t u) = ||u||_a^2 t^2 / 2 + V0(u) t^4 / 4 from the two coefficients"""
    e = energy(u, a, table)
    t = np.asarray(t_values, dtype=np.float64)
    return list(0.5 * e.norm_a_sq * t**2 + 0.25 * e.V0 * t**4)


def bilinear_checks(u: Field, v: Field, table: KernelTable, metadata: KernelMetadata | None = None) -> BilinearReport:
    """
    Both sides of the estimates for B1 and B2 with measured constants.

    |B1(u^2, v^2)| <= C1 |u|_{12/5}^2 |v|_{12/5}^2
    |B2(u^2, v^2)| <= S |u|_2^2 |v|_2^2 + C_K (|u|_*^2 |v|_2^2 + |u|_2^2 |v|_*^2)
    B2(u^2, v^2) >= -(S + C_K) |u|_2^2 |v|_2^2
    with S = sup |K2| below the crossover radius.
    """
    meta = metadata or table.metadata()
    u2 = u.replace(u.values**2)
    v2 = v.replace(v.values**2)
    b1 = float(u.cell_measure * np.sum(v2.values * convolve_with_table(u2, table, "k1").values))
    b2 = float(u.cell_measure * np.sum(v2.values * convolve_with_table(u2, table, "k2").values))

    u_125, v_125 = lp_norm(u, 12.0 / 5.0) ** 2, lp_norm(v, 12.0 / 5.0) ** 2
    u_2, v_2 = lp_norm(u, 2.0) ** 2, lp_norm(v, 2.0) ** 2
    u_star, v_star = log_weight_norm(u) ** 2, log_weight_norm(v) ** 2

    return BilinearReport(
        b1=b1,
        b1_bound=B1_CONSTANT * u_125 * v_125,
        b2=b2,
        b2_upper_bound=meta.near_sup * u_2 * v_2 + meta.log_constant * (u_star * v_2 + u_2 * v_star),
        b2_lower_bound=-(meta.near_sup + meta.log_constant) * u_2 * v_2,
        constants={"C1": B1_CONSTANT, "S": meta.near_sup, "C_K": meta.log_constant, "R": meta.crossover_radius},
    )


def random_smooth_field(grid: GridSpec, rng: np.random.Generator, bumps: int = 3) -> Field:
    """Sum of Gaussian bumps with random centres, widths and signs, modulated in x3"""
    x1, x2, x3 = coordinates(grid)
    values = np.zeros(grid.shape)
    for _ in range(bumps):
        cx, cy = rng.uniform(-0.4 * grid.L, 0.4 * grid.L, size=2)
        width = rng.uniform(0.1, 0.3) * grid.L
        sign = rng.choice([-1.0, 1.0])
        values = values + sign * np.exp(-((x1 - cx) ** 2 + (x2 - cy) ** 2) / width**2) * np.ones_like(x3)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    modulation = 1.0 + 0.5 * np.cos(math.pi * vertical_coordinates(grid) / grid.ell + phase)
    return Field(grid, values * modulation[None, None, :], SymmetryTag.GENERAL)


def mountain_radius(a: PotentialSpec, table: KernelTable, samples: int = 50, seed: int = 0) -> MountainReport:
    """
    Measured beta with Phi(beta v) > 0 and Phi'(beta v) beta v > 0 on sampled ||v||_a = 1.

    On the fiber Phi'(beta v) beta v = beta^2 + beta^4 V0(v), positive for
    beta^2 < -1/V0(v); beta is half the smallest such bound.
    """
    problem = VariationalProblem.slab(a, table)
    rng = np.random.default_rng(seed)
    quartics = []
    for _ in range(samples):
        v = random_smooth_field(table.grid, rng)
        v = v.scaled(1.0 / math.sqrt(problem.norm_sq(v)))
        quartics.append(problem.energy(v).V0)
    quartics = np.asarray(quartics)
    negative = quartics[quartics < 0.0]
    beta = 0.5 * float(np.sqrt(1.0 / -negative).min()) if negative.size else 1.0
    phis = 0.5 * beta**2 + 0.25 * quartics * beta**4
    derivatives = beta**2 + quartics * beta**4
    logger.info(f"Mountain radius beta={beta:.4e} over {samples} directions")
    return MountainReport(
        beta=beta,
        samples=samples,
        min_phi=float(phis.min()),
        min_nehari_derivative=float(derivatives.min()),
    )
