"""
Ground states on the Nehari manifold.

Each iterate takes a step along the class gradient in the a-metric, re-projects onto
the symmetry class and rescales onto the Nehari manifold with the explicit factor t_u.
Steps follow Armijo backtracking from an extrapolated point, with a momentum restart
whenever Phi would not drop. The gradient is a-orthogonal to u on the manifold, so
the rescale is a first-order retraction.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Optional

import numpy as np

from chainsolve.calibration import calibrated_table
from chainsolve.fields import Field, PotentialSpec, coordinates, norm_a, vertical_coordinates
from chainsolve.kernel import KernelTable
from chainsolve.poisson import apply_green, choquard_residual, free_space_newton_energy
from chainsolve.resilience import (
    ConfigError,
    ConvergenceError,
    GridError,
    LinearSolveError,
    NoNehariSeedError,
    NumericalError,
    resilient_map,
)
from chainsolve.schemas import (
    EnergyBreakdown,
    GridSpec,
    ScanResult,
    ScanRow,
    SolveReport,
    SolverConfig,
    SymmetryTag,
    TraceRow,
)
from chainsolve.symmetry import d3_energy_fraction, projector_for, radialize, symmetry_defect
from chainsolve.variational import VariationalProblem

logger = logging.getLogger(__name__)

MIN_STEP = 1e-12

# amplitude of the cos(pi x3 / ell) perturbation of the planar seed in the ell scan
SCAN_PERTURBATION = 0.1

Projector = Callable[[Field], Field]


def seed_field(
    grid: GridSpec,
    config: SolverConfig,
    width: float,
    width_z: float,
    rng: np.random.Generator,
    planar: bool = False,
) -> Field:
    """Gaussian seed of the configured class with a random jitter"""
    jitter = config.perturbation
    width = width * (1.0 + jitter * rng.uniform(-1.0, 1.0))
    offset = rng.uniform(-0.5, 0.5, size=2) * width
    amplitude = config.seed_amplitude

    if planar:
        x1, x2 = coordinates(grid, planar=True)
        profile = np.exp(-(x1**2 + x2**2) / width**2)
        profile = profile + jitter * np.exp(-((x1 - offset[0]) ** 2 + (x2 - offset[1]) ** 2) / width**2)
        return Field(grid, amplitude * profile)

    x1, x2, x3 = coordinates(grid)
    profile = np.exp(-(x1**2 + x2**2) / width**2)
    profile = profile + jitter * np.exp(-((x1 - offset[0]) ** 2 + (x2 - offset[1]) ** 2) / width**2)
    if config.symmetry == "radial":
        vertical = np.exp(-(x3**2) / width_z**2)
    elif config.symmetry == "g_invariant":
        vertical = np.cos(math.pi * x3 / grid.ell)
    else:
        vertical = np.ones_like(x3)
    return Field(grid, amplitude * profile * vertical)


def _nehari_project(problem: VariationalProblem, u: Field) -> Optional[Field]:
    scale = problem.nehari_scale(u)
    if not scale.defined:
        return None
    return u.scaled(scale.t_u)


def _seed_on_nehari(
    problem: VariationalProblem, config: SolverConfig, project: Projector, rng: np.random.Generator
) -> Field:
    """Seed with V0 < 0, halving the widths while V0 >= 0"""
    width, width_z = config.seed_width, config.seed_width_z
    attempts = config.max_width_halvings + 1
    for attempt in range(attempts):
        u = project(seed_field(problem.grid, config, width, width_z, rng, planar=problem.planar))
        scaled = _nehari_project(problem, u)
        if scaled is not None:
            return scaled
        logger.warning(f"Seed width {width:.4g} has V0 >= 0, halving (attempt {attempt + 1}/{attempts})")
        width, width_z = 0.5 * width, 0.5 * width_z
    raise NoNehariSeedError(attempts)


def _armijo_step(
    problem: VariationalProblem, project: Projector, base: Field, e: EnergyBreakdown, g: Field, g_sq: float,
    step: float, config: SolverConfig,
) -> tuple[Optional[Field], Optional[EnergyBreakdown], float]:
    """Backtrack from `step` until Phi(t (base - step g)) <= Phi(base) - c step ||g||_a^2"""
    while step >= MIN_STEP:
        candidate = _nehari_project(problem, project(base.replace(base.values - step * g.values)))
        if candidate is not None:
            e_new = problem.energy(candidate)
            if e_new.phi <= e.phi - config.sufficient_decrease * step * g_sq:
                return candidate, e_new, step
        step *= config.armijo_factor
    return None, None, step


def _descend(
    problem: VariationalProblem, u: Field, project: Projector, config: SolverConfig
) -> tuple[Field, list[TraceRow], int]:
    """
    Accelerated descent on the Nehari manifold; raises ConvergenceError with the trace.

    The step is taken from u + beta_k (u - u_prev), beta_k = k / (k + 3), and kept only
    when Phi drops strictly below Phi(u). Otherwise the momentum restarts and the step is
    taken from u itself, so every accepted iterate lowers Phi.
    """
    e = problem.energy(u)
    g = problem.class_gradient(u, project)
    g_sq = problem.norm_sq(g)
    rel = math.sqrt(g_sq / e.norm_a_sq)
    step = config.initial_step
    previous: Optional[Field] = None
    k = 0
    restarts = 0
    trace: list[TraceRow] = []

    for iteration in range(1, config.max_iters + 1):
        if rel < config.tol_g:
            logger.debug(f"Converged after {iteration - 1} iterations, {restarts} momentum restarts")
            return u, trace, iteration - 1

        accepted = None
        if config.momentum and previous is not None and k > 0:
            beta = k / (k + 3.0)
            y = _nehari_project(problem, project(u.replace(u.values + beta * (u.values - previous.values))))
            if y is not None:
                e_y = problem.energy(y)
                g_y = problem.class_gradient(y, project)
                accepted, e_new, taken = _armijo_step(problem, project, y, e_y, g_y, problem.norm_sq(g_y), step, config)
                if accepted is not None and e_new.phi >= e.phi:
                    accepted = None
        if accepted is None:
            if k > 0:
                restarts += 1
            k = 0
            accepted, e_new, taken = _armijo_step(problem, project, u, e, g, g_sq, step, config)
            if accepted is None:
                raise ConvergenceError(iteration, rel, trace)

        previous, u, e = u, accepted, e_new
        k += 1
        g = problem.class_gradient(u, project)
        g_sq = problem.norm_sq(g)
        rel = math.sqrt(g_sq / e.norm_a_sq)
        nehari = abs(e.norm_a_sq + e.V0) / e.norm_a_sq
        trace.append(TraceRow(iteration=iteration, phi=e.phi, grad_norm=rel, step=taken, nehari_residual=nehari))
        logger.debug(f"iter {iteration}: phi={e.phi:.12e} grad={rel:.3e} step={taken:.3e} k={k}")
        step = min(taken / config.armijo_factor, config.initial_step)

    if rel < config.tol_g:
        return u, trace, config.max_iters
    logger.debug(f"{restarts} momentum restarts before the iteration limit")
    raise ConvergenceError(config.max_iters, rel, trace)


def _solve(
    problem: VariationalProblem,
    config: SolverConfig,
    project: Projector,
    initial: Optional[Field],
    residual: Callable[[Field], float],
) -> SolveReport:
    runs = 1 if initial is not None else config.restarts
    results: list[tuple[Field, list[TraceRow], int, float]] = []
    errors: list[NumericalError] = []

    for restart in range(runs):
        rng = np.random.default_rng(config.random_seed + restart)
        try:
            if initial is not None:
                u0 = _nehari_project(problem, project(initial))
                if u0 is None:
                    raise NoNehariSeedError(1)
            else:
                u0 = _seed_on_nehari(problem, config, project, rng)
            u, trace, iterations = _descend(problem, u0, project, config)
        except (NoNehariSeedError, ConvergenceError, LinearSolveError) as e:
            logger.warning(f"Restart {restart} ({config.symmetry}) failed: {e}")
            errors.append(e)
            continue
        phi = problem.energy(u).phi
        logger.info(f"Restart {restart} ({config.symmetry}): phi={phi:.12e} after {iterations} iterations")
        results.append((u, trace, iterations, phi))

    if not results:
        raise errors[-1]

    u, trace, iterations, _ = min(results, key=lambda r: r[3])
    phis = [r[3] for r in results]
    dispersion = (max(phis) - min(phis)) / abs(min(phis)) if len(phis) > 1 else 0.0

    # post-hoc diagnostics from the returned field only
    energy_report = problem.energy(u)
    g = problem.class_gradient(u, project)
    grad_norm = math.sqrt(problem.norm_sq(g) / energy_report.norm_a_sq)
    d3 = None
    if not u.is_planar:
        try:
            d3 = d3_energy_fraction(u)
        except GridError:
            d3 = None

    return SolveReport(
        symmetry=config.symmetry,
        energy=energy_report,
        grad_norm=grad_norm,
        nehari_residual=problem.nehari_residual(u),
        pde_residual=residual(u),
        d3_fraction=d3,
        iterations=iterations,
        restart_phis=phis,
        restart_dispersion=dispersion,
        sign_pair_phi=problem.energy(-u).phi,
        trace=trace,
        field=u,
    )


def residual_report(u: Field, a: PotentialSpec, table: KernelTable) -> float:
    """||-Lap u + a u + K[u^2] u|| / ||u|| on the interior"""
    if not np.any(u.values):
        return 0.0
    w = apply_green(u.replace(u.values**2), table)
    return choquard_residual(u, a, w)


def ground_state(
    config: SolverConfig, a: PotentialSpec, table: KernelTable, initial: Optional[Field] = None
) -> SolveReport:
    """
    Least-energy critical point of Phi in the configured symmetry class.

    With `initial`, one descent starts from that field instead of the Gaussian restarts.

    Raises:
        NoNehariSeedError: no seed reached V0 < 0
        ConvergenceError: descent did not reach tol_g (carries the trace)
    """
    if config.symmetry == "g_invariant" and not a.x3_independent:
        raise ConfigError("potential", "the G-invariant class needs an x3-independent potential")
    problem = VariationalProblem.slab(a, table, cg_rtol=config.cg_rtol, cg_maxiter=config.cg_maxiter)
    report = _solve(problem, config, projector_for(config.symmetry), initial, lambda u: residual_report(u, a, table))
    report.field = report.field.replace(report.field.values, _class_tag(config.symmetry))
    return report


def _class_tag(symmetry: str) -> SymmetryTag:
    return {
        "radial": SymmetryTag.RADIAL,
        "g_invariant": SymmetryTag.G_INVARIANT,
        "planar": SymmetryTag.PLANAR_CONSTANT,
    }[symmetry]


def planar_ground_state(
    config: SolverConfig, a: PotentialSpec, grid: GridSpec, near_field_cells: int = 3
) -> SolveReport:
    """Radial ground state of the planar functional with kernel (1/2pi) log|x'|; phi is kappa"""
    problem = VariationalProblem.plane(a, grid, near_field_cells, cg_rtol=config.cg_rtol, cg_maxiter=config.cg_maxiter)

    def residual(u: Field) -> float:
        w = problem.potential(u.replace(u.values**2))
        return choquard_residual(u, a, w)

    planar_config = config.model_copy(update={"symmetry": "radial"})
    report = _solve(problem, planar_config, radialize, None, residual)
    report.symmetry = "planar"
    return report


def symmetry_breaking_bound(phi: Field, a: PotentialSpec, kappa: float, near_field_cells: int = 3) -> float:
    """
    ell beyond which the radial ground state cannot be x3-constant.

    pi ||phi||_a^4 / (mu kappa) with mu the Newton energy of phi^2 (phi compactly
    supported inside the slab).
    """
    mu = -4.0 * math.pi * free_space_newton_energy(phi, near_field_cells)
    if mu <= 0.0 or kappa <= 0.0:
        raise GridError("symmetry_breaking_bound needs a nonzero test field and kappa > 0")
    return math.pi * norm_a(phi, a) ** 4 / (mu * kappa)


def _scan_row(
    ell: float,
    config: SolverConfig,
    a: PotentialSpec,
    grid: GridSpec,
    planar: Field,
    kappa: float,
    near_field_cells: int,
    kernel_options: dict,
) -> ScanRow:
    """Levels at one ell; a numerical failure of any solve becomes a failed row"""
    try:
        return _scan_levels(ell, config, a, grid, planar, kappa, near_field_cells, kernel_options)
    except NumericalError as e:
        logger.warning(f"Scan ell={ell} failed: {type(e).__name__}: {e}")
        return ScanRow(ell=ell, two_ell_kappa=2.0 * ell * kappa, status="failed", error=f"{type(e).__name__}: {e}")


def _scan_levels(
    ell: float,
    config: SolverConfig,
    a: PotentialSpec,
    grid: GridSpec,
    planar: Field,
    kappa: float,
    near_field_cells: int,
    kernel_options: dict,
) -> ScanRow:
    slab_grid = grid.with_ell(ell)
    table = calibrated_table(slab_grid, near_field_cells, **kernel_options)
    extension = Field(slab_grid, planar.values).extend()

    planar_slab = ground_state(config.model_copy(update={"symmetry": "planar"}), a, table, initial=extension)

    z = vertical_coordinates(slab_grid)
    perturbed = extension.replace(
        extension.values * (1.0 + SCAN_PERTURBATION * np.cos(math.pi * z / ell))[None, None, :], SymmetryTag.GENERAL
    )
    radial_config = config.model_copy(update={"symmetry": "radial"})
    radial = ground_state(radial_config, a, table, initial=perturbed)
    try:
        seeded = ground_state(radial_config, a, table)
        if seeded.energy.phi < radial.energy.phi:
            radial = seeded
    except NumericalError as e:
        logger.warning(f"Gaussian-seeded radial solve failed at ell={ell}: {e}")

    g_class = ground_state(config.model_copy(update={"symmetry": "g_invariant"}), a, table)

    row = ScanRow(
        ell=ell,
        c_r=radial.energy.phi,
        c_G=g_class.energy.phi,
        c_planar_slab=planar_slab.energy.phi,
        two_ell_kappa=2.0 * ell * kappa,
        d3_radial=radial.d3_fraction,
        d3_g=g_class.d3_fraction,
        g_defect=symmetry_defect(g_class.field, SymmetryTag.G_INVARIANT),
    )
    logger.info(f"Scan ell={ell}: c_r={row.c_r:.8e} c_G={row.c_G:.8e} 2 ell kappa={row.two_ell_kappa:.8e}")
    return row


def ell_scan(
    ell_values: list[float],
    config: SolverConfig,
    a: PotentialSpec,
    grid: GridSpec,
    near_field_cells: int = 3,
    margin: float = 1e-3,
    kernel_options: Optional[dict] = None,
    max_workers: int = 1,
    completed: Optional[list[ScanRow]] = None,
    on_row: Optional[Callable[[ScanRow], None]] = None,
) -> ScanResult:
    """
    Radial and G-invariant levels against the planar baseline 2 ell kappa.

    Per-ell solver failures become rows with status "failed"; rows in `completed`
    are kept and not recomputed.
    """
    if not a.x3_independent:
        raise ConfigError("potential", "the ell scan needs an x3-independent potential")
    kernel_options = kernel_options or {}
    planar = planar_ground_state(config, a, grid, near_field_cells)
    kappa = planar.energy.phi
    logger.info(f"Planar level kappa={kappa:.12e}")

    done = {row.ell: row for row in (completed or []) if row.status == "ok"}
    pending = [ell for ell in ell_values if ell not in done]

    def run(ell: float) -> ScanRow:
        row = _scan_row(ell, config, a, grid, planar.field, kappa, near_field_cells, kernel_options)
        if on_row is not None:
            on_row(row)
        return row

    successes, failures = resilient_map(run, pending, max_workers=max_workers)
    rows = dict(done)
    rows.update({ell: row for ell, row in successes})
    for ell, message in failures:
        failed = ScanRow(ell=ell, two_ell_kappa=2.0 * ell * kappa, status="failed", error=message)
        if on_row is not None:
            on_row(failed)
        rows[ell] = failed
    ordered = [rows[ell] for ell in sorted(rows)]

    ell_star = next(
        (r.ell for r in ordered if r.status == "ok" and r.c_r < r.two_ell_kappa * (1.0 - margin)),
        None,
    )

    ell_bound = None
    try:
        test_grid = grid.with_ell(max(ell_values))
        x1, x2, x3 = coordinates(test_grid)
        bump = Field(test_grid, np.exp(-(x1**2 + x2**2 + x3**2) / config.seed_width**2), SymmetryTag.RADIAL)
        ell_bound = symmetry_breaking_bound(bump, a, kappa, near_field_cells)
    except GridError as e:
        logger.warning(f"No symmetry-breaking bound: {e}")

    return ScanResult(kappa=kappa, rows=ordered, ell_star=ell_star, margin=margin, ell_bound=ell_bound)
