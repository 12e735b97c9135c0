"""
Acceptance runner.
Each check builds its own inputs at the reference sizes, measures, and returns a
CriterionResult; run_verify aggregates them into a VerifySummary.
"""

import logging
import math
import time
from typing import Callable, Optional

import numpy as np

from chainsolve.calibration import calibrated_table, collapse_error, gaussian_density
from chainsolve.fields import Field, PotentialSpec, convolve_with_table, direct_convolution
from chainsolve.kernel import (
    EULER_GAMMA,
    FOUR_PI,
    build_kernel_table,
    image_sum_oracle,
    k2_eval,
    k_eval,
    ode_apply,
    ode_green,
    ode_jump,
    reference_calibration,
)
from chainsolve.poisson import newtonian_bump, newtonian_limit_experiment
from chainsolve.resilience import ChainsolveError
from chainsolve.schemas import CriterionResult, GridSpec, SolverConfig, VerifySummary
from chainsolve.solver import ell_scan, ground_state
from chainsolve.variational import VariationalProblem, fiber_profile, random_smooth_field

logger = logging.getLogger(__name__)

REFERENCE_GRID = GridSpec(L=12.0, n_x=64, ell=1.0, n_z=32)
REFERENCE_SEED = 20240601

Check = Callable[[], tuple[bool, dict]]


def _order(errors: list[float]) -> float:
    """Smallest observed order over successive halvings"""
    return min(math.log2(errors[i] / errors[i + 1]) for i in range(len(errors) - 1))


def check_ode(ell: float = 1.0, radii=(0.1, 1.0, 10.0), sizes=(64, 128, 256)) -> tuple[bool, dict]:
    """Mode Green function against the cos(pi t/ell) solution, plus the derivative jump"""
    measured = {}
    passed = True
    for r in radii:
        n = sizes[-1]
        t = -ell + np.arange(n) * 2.0 * ell / n
        exact = -np.cos(math.pi * t / ell) / (2.0 * math.pi * (r * r + (math.pi / ell) ** 2))
        apply_err = float(np.abs(ode_apply(r, ell, np.cos(math.pi * t / ell), t) - exact).max())

        # trapezoid product integration of h_r resolves the kink at t = s to second order
        quad_errors = []
        for m in sizes:
            tm = -ell + np.arange(m) * 2.0 * ell / m
            exact_m = -np.cos(math.pi * tm / ell) / (2.0 * math.pi * (r * r + (math.pi / ell) ** 2))
            kernel = ode_green(r, ell, tm[:, None], tm[None, :])
            approx = (2.0 * ell / m) * kernel @ np.cos(math.pi * tm / ell)
            quad_errors.append(float(np.abs(approx - exact_m).max()))
        order = _order(quad_errors)

        left, right = ode_jump(r, ell, 0.0)
        jump_err = max(abs(left + 1.0 / FOUR_PI), abs(right - 1.0 / FOUR_PI))

        ok = apply_err < 1e-8 and order >= 1.9 and jump_err < 1e-6
        passed = passed and ok
        measured[f"r={r}"] = {"apply_error": apply_err, "order": order, "jump_error": jump_err}
    return passed, measured


def check_kernel_oracle(ell: float = 1.0, count: int = 100, seed: int = REFERENCE_SEED) -> tuple[bool, dict]:
    """k_eval against the image sum over offsets with norms in [0.1, 50]"""
    rng = np.random.default_rng(seed)
    norms = np.exp(rng.uniform(math.log(0.1), math.log(50.0), size=count))
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    offsets = norms[:, None] * directions

    diffs = np.array([image_sum_oracle(o, ell) - k_eval(o, ell).total for o in offsets])
    constant = 0.5 * (diffs.max() + diffs.min())
    deviation = float(np.abs(diffs - constant).max())
    expected = (EULER_GAMMA - math.log(4.0 * ell)) / (FOUR_PI * ell)
    return deviation < 1e-6, {
        "max_deviation": deviation,
        "fitted_constant": float(constant),
        "expected_constant": expected,
    }


def check_table_symmetry(grid: GridSpec = REFERENCE_GRID, count: int = 100, seed: int = REFERENCE_SEED) -> tuple[bool, dict]:
    """Table entries for x - y and y - x, and for translated triples, agree"""
    table = calibrated_table(grid)
    rng = np.random.default_rng(seed)
    n, nz = grid.n_x, grid.n_z
    scale = float(np.abs(table.total).max())
    worst = 0.0
    for _ in range(count):
        x = np.array([rng.integers(0, n), rng.integers(0, n), rng.integers(0, nz)])
        y = np.array([rng.integers(0, n), rng.integers(0, n), rng.integers(0, nz)])
        z = np.array([rng.integers(-n // 2, n // 2 + 1), rng.integers(-n // 2, n // 2 + 1), rng.integers(0, nz)])
        forward = table.lookup(*(x - y)).total
        backward = table.lookup(*(y - x)).total
        worst = max(worst, abs(forward - backward))
        # translate both points by z, staying inside the planar box
        yz, xz = y + z, x - z
        if np.all((0 <= yz[:2]) & (yz[:2] < n)) and np.all((0 <= xz[:2]) & (xz[:2] < n)):
            worst = max(worst, abs(table.lookup(*(x - yz)).total - table.lookup(*(xz - y)).total))
    relative = worst / scale
    return relative <= 1e-12, {"max_relative_asymmetry": relative}


def check_log_asymptotics(ell: float = 1.0) -> tuple[bool, dict]:
    """K2(s e, 0) / log(1 + s) for s in 1e2..1e4 along three directions"""
    directions = [(1.0, 0.0, 0.0), (math.sqrt(0.5), math.sqrt(0.5), 0.0), (0.6, 0.8, 0.0)]
    ratios = []
    for e in directions:
        for s in (1e2, 1e3, 1e4):
            ratios.append(k2_eval(tuple(s * c for c in e), ell) / math.log1p(s))
    ratios = np.array(ratios)
    spread = float(np.ptp(ratios) / np.abs(ratios.mean()))
    limit = float(ratios[-1])
    return spread < 0.01 and limit > 0.0, {"relative_spread": spread, "limit_estimate": limit, "expected_limit": 1.0 / (FOUR_PI * ell)}


def check_collapse(grid: GridSpec = REFERENCE_GRID) -> tuple[bool, dict]:
    """Calibrated on one Gaussian, validated on a wider one"""
    table = calibrated_table(grid)
    error = collapse_error(table, gaussian_density(grid, 2.5))
    return error < 1e-3, {
        "collapse_error": error,
        "calibration_constant": table.calibration_constant,
        "reference_constant": reference_calibration(grid.ell),
    }


NEWTONIAN_MULTIPLES = tuple(2.0**k for k in range(1, 10))


def check_newtonian_limit(
    support_radius: float = 1.0, cells_per_radius: int = 5, multiples=NEWTONIAN_MULTIPLES
) -> tuple[bool, dict]:
    """Slab energies of a unit-scale bump approach the free-space energy over a doubling window"""
    phi = newtonian_bump(support_radius, cells_per_radius)
    rows = newtonian_limit_experiment(phi, [m * support_radius for m in multiples])
    errors = [row.rel_err for row in rows]
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    measured = {"ell": [row.ell for row in rows], "rel_err": errors}
    if 16.0 in multiples:
        measured["rel_err_at_16r"] = errors[list(multiples).index(16.0)]
    return decreasing and errors[-1] < 0.02, measured


def check_fft_convolution(seed: int = REFERENCE_SEED) -> tuple[bool, dict]:
    """FFT convolution against the direct lattice sum on a 16x16x8 grid"""
    grid = GridSpec(L=2.0, n_x=16, ell=1.0, n_z=8)
    table = build_kernel_table(grid)
    rng = np.random.default_rng(seed)
    f = Field(grid, rng.uniform(-1.0, 1.0, size=grid.shape))
    fast = convolve_with_table(f, table).values
    direct = direct_convolution(f, table)
    relative = float(np.abs(fast - direct).max() / np.abs(direct).max())
    return relative < 1e-10, {"relative_linf": relative}


def check_gradient(grid: GridSpec = REFERENCE_GRID, pairs: int = 10, eps: float = 1e-5, seed: int = REFERENCE_SEED) -> tuple[bool, dict]:
    """Central differences of Phi against <g, v>_a"""
    table = calibrated_table(grid)
    problem = VariationalProblem.slab(PotentialSpec.constant(1.0), table)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        u = random_smooth_field(grid, rng)
        v = random_smooth_field(grid, rng)
        numeric = (problem.phi(u + v.scaled(eps)) - problem.phi(u - v.scaled(eps))) / (2.0 * eps)
        analytic = problem.inner(problem.gradient(u), v)
        worst = max(worst, abs(numeric - analytic) / max(abs(analytic), 1e-300))
    return worst < 1e-5, {"max_relative_error": worst}


def check_ground_state(grid: GridSpec = REFERENCE_GRID) -> tuple[bool, dict]:
    """Radial ground state for a = 1 with refinement and fiber checks"""
    a = PotentialSpec.constant(1.0)
    config = SolverConfig(symmetry="radial", restarts=2)
    report = ground_state(config, a, calibrated_table(grid))
    coarse_grid = GridSpec(L=grid.L, n_x=grid.n_x // 2, ell=grid.ell, n_z=grid.n_z // 2)
    coarse = ground_state(config, a, calibrated_table(coarse_grid))
    order = math.log2(coarse.pde_residual / report.pde_residual)

    u = report.field
    profile = fiber_profile(u, [0.5, 0.9, 1.0, 1.1, 2.0], a, calibrated_table(grid))
    peak = profile[2]
    fiber_ok = all(peak >= p for p in profile)

    measured = {
        "phi": report.energy.phi,
        "grad_norm": report.grad_norm,
        "nehari_residual": report.nehari_residual,
        "restart_dispersion": report.restart_dispersion,
        "pde_residual": report.pde_residual,
        "pde_residual_coarse": coarse.pde_residual,
        "residual_order": order,
        "fiber": profile,
    }
    passed = (
        report.grad_norm < 1e-6
        and report.nehari_residual < 1e-10
        and report.energy.phi > 0.0
        and report.restart_dispersion < 1e-6
        and order >= 1.8
        and fiber_ok
    )
    return passed, measured


def _scan_verdict(result) -> tuple[bool, bool, bool]:
    """(c_r <= 2 ell kappa + 1e-6 on every row, breaking seen, G-class checks); failed rows fail the first"""
    ok_rows = [r for r in result.rows if r.status == "ok"]
    complete = bool(ok_rows) and len(ok_rows) == len(result.rows)
    below = all(r.c_r <= r.two_ell_kappa + 1e-6 for r in ok_rows)
    breaking = any(r.c_r < r.two_ell_kappa * (1.0 - 1e-3) and (r.d3_radial or 0.0) > 0.1 for r in ok_rows)
    g_ok = all((r.d3_g or 0.0) > 0.0 and (r.g_defect or 0.0) <= 1e-12 for r in ok_rows)
    return below and complete, breaking, g_ok


def check_symmetry_breaking(grid: GridSpec = REFERENCE_GRID, ell_values=(0.5, 1.0, 2.0, 4.0, 8.0)) -> tuple[bool, dict]:
    """Radial level against 2 ell kappa; the window moves up once if no breaking is seen"""
    a = PotentialSpec.constant(1.0)
    config = SolverConfig(restarts=1)
    result = ell_scan(list(ell_values), config, a, grid)
    below, breaking, g_ok = _scan_verdict(result)
    adjusted = False
    if not breaking:
        logger.warning("No symmetry breaking in the scanned window, extending it upward once")
        adjusted = True
        top = max(ell_values)
        result = ell_scan([*ell_values, 2.0 * top, 4.0 * top], config, a, grid, completed=result.rows)
        below, breaking, g_ok = _scan_verdict(result)
    measured = {
        "kappa": result.kappa,
        "ell_star": result.ell_star,
        "ell_bound": result.ell_bound,
        "window_adjusted": adjusted,
        "rows": [row.model_dump(mode="json") for row in result.rows],
    }
    return below and breaking and g_ok, measured


CRITERIA: dict[str, tuple[str, Check]] = {
    "A1": ("ODE Green function", check_ode),
    "A2": ("Kernel cross-validation", check_kernel_oracle),
    "A3": ("Kernel symmetry and translation", check_table_symmetry),
    "A4": ("Log asymptotics", check_log_asymptotics),
    "A5": ("2D collapse", check_collapse),
    "A6": ("Newtonian limit", check_newtonian_limit),
    "A7": ("FFT convolution equals direct sum", check_fft_convolution),
    "A8": ("Gradient check", check_gradient),
    "A9": ("Ground state", check_ground_state),
    "A10": ("Symmetry breaking", check_symmetry_breaking),
}


def run_criterion(criterion_id: str) -> CriterionResult:
    """Run one check; library errors count as a failure with the message recorded"""
    title, check = CRITERIA[criterion_id]
    logger.info(f"Running {criterion_id}: {title}")
    start = time.perf_counter()
    try:
        passed, measured = check()
    except ChainsolveError as e:
        logger.error(f"{criterion_id} raised {type(e).__name__}: {e}")
        passed, measured = False, {"error": f"{type(e).__name__}: {e}"}
    seconds = time.perf_counter() - start
    logger.info(f"{criterion_id} {'PASS' if passed else 'FAIL'} in {seconds:.1f}s")
    return CriterionResult(id=criterion_id, title=title, passed=passed, measured=measured, seconds=seconds)


def run_verify(only: Optional[list[str]] = None) -> VerifySummary:
    """
    Run the acceptance checks.

    Args:
        only: criterion ids to run, all of them by default

    Raises:
        KeyError: an unknown criterion id
    """
    ids = list(CRITERIA) if not only else only
    unknown = [i for i in ids if i not in CRITERIA]
    if unknown:
        raise KeyError(f"unknown criteria: {', '.join(unknown)}")
    results = [run_criterion(i) for i in ids]
    return VerifySummary(passed=all(r.passed for r in results), criteria=results)
