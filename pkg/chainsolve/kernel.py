"""
Periodic Green kernel of the Laplacian on the slab R^2 x (-ell, ell).

K = K1 + K2 with K1 = -1/(4 pi |x|) (third coordinate reduced to [-ell, ell]) and K2
smooth, growing like log(1+|x|). In planar Fourier variables each mode is the Green
function h_r of u'' - r^2 u = f/(2 pi) on the periodic interval; K2 is the finite-part
Hankel integral of the remainder after removing K1.

All exponentials are written as exp(-positive) so nothing overflows for large 2*ell*r.
"""

from __future__ import annotations

import logging
import math
import warnings
from typing import Literal

import numpy as np
import scipy.fft
from numpy.typing import NDArray
from scipy.integrate import IntegrationWarning, quad
from scipy.special import j0, k0

from chainsolve.config import MEMORY_LIMIT_MB
from chainsolve.resilience import (
    GridError,
    MemoryBudgetError,
    ModeError,
    QuadratureError,
    SingularOffsetError,
)
from chainsolve.schemas import GridSpec, KernelMetadata, KernelValue

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi
EULER_GAMMA = float(np.euler_gamma)

# ell * rho beyond which the pole-subtracted remainder is below 1e-16 of its peak
REMAINDER_DECAY = 38.0

# radius splitting the Hankel integral into inner and outer parts
SPLIT_RADIUS = 1.0

# inner part goes to adaptive Gauss-Kronrod below this planar distance
ADAPTIVE_MAX_DISTANCE = 100.0

DEFAULT_QUAD_TOL = 1e-11


def reduce_dz(dz, ell: float):
    """Periodic reduction of the third offset coordinate into [-ell, ell)"""
    return np.mod(np.asarray(dz, dtype=np.float64) + ell, 2.0 * ell) - ell


def reference_calibration(ell: float) -> float:
    """Additive constant for which the x3-integral of K is (1/2pi) log|x'| exactly"""
    return (math.log(2.0) - EULER_GAMMA) / (FOUR_PI * ell)


# --- one planar mode ---------------------------------------------------------


def _check_mode(r):
    r_arr = np.asarray(r, dtype=np.float64)
    bad = ~np.isfinite(r_arr) | (r_arr <= 0.0)
    if np.any(bad):
        raise ModeError(float(r_arr[bad].flat[0]) if r_arr.ndim else float(r_arr))
    return r_arr


def _mode_kernel(r, d, ell: float):
    """h_r as a function of the distance d = |t - s| in [0, 2 ell]"""
    num = np.exp(-r * d) + np.exp(-r * (2.0 * ell - d))
    return -num / (FOUR_PI * r * (-np.expm1(-2.0 * ell * r)))


def ode_green(r: float, ell: float, t, s):
    """
    Green function h_r(t, s) of u'' - r^2 u = f/(2 pi) with periodic conditions on [-ell, ell].

    Raises:
        ModeError: r <= 0 or r not finite (the zero mode has no Green function)
    """
    r = _check_mode(r)
    d = np.abs(np.asarray(t, dtype=np.float64) - np.asarray(s, dtype=np.float64))
    value = _mode_kernel(r, d, ell)
    return float(value) if np.ndim(value) == 0 else value


def ode_jump(r: float, ell: float, s: float = 0.0, eps: float = 1e-4) -> tuple[float, float]:
    """One-sided second-order derivatives of h_r(., s) at t = s: (left, right)"""
    h = lambda t: ode_green(r, ell, t, s)  # noqa: E731
    left = (3.0 * h(s) - 4.0 * h(s - eps) + h(s - 2.0 * eps)) / (2.0 * eps)
    right = (-3.0 * h(s) + 4.0 * h(s + eps) - h(s + 2.0 * eps)) / (2.0 * eps)
    return float(left), float(right)


def ode_apply(r, ell: float, f: NDArray, t: NDArray | None = None, axis: int = -1) -> NDArray:
    """
    Apply H_r: the periodic solution of u'' - r^2 u = f/(2 pi).

    Product integration of h_r against the trigonometric interpolant of f, evaluated
    through the FFT: exact for trigonometric polynomials resolved by the grid.

    Args:
        r: wavenumber, scalar or broadcastable against f without its sampled axis
        ell: half-period
        f: samples at t_k = -ell + k h, h = 2 ell / n (real or complex)
        t: optional sample positions, checked for uniformity
        axis: sampled axis of f

    Raises:
        GridError: non-uniform or mismatched sample positions
    """
    f = np.asarray(f)
    n = f.shape[axis]
    if t is not None:
        t = np.asarray(t, dtype=np.float64)
        h = 2.0 * ell / n
        expected = -ell + h * np.arange(n)
        if t.shape != (n,) or not np.allclose(t, expected, rtol=0.0, atol=1e-9 * h):
            raise GridError("ode_apply needs uniform periodic samples t_k = -ell + k * 2 ell / n")
    r = _check_mode(r)

    f = np.moveaxis(f, axis, -1)
    r = r[..., None] if r.ndim else r
    complex_input = np.iscomplexobj(f)
    if complex_input:
        kappa = np.pi * scipy.fft.fftfreq(n, d=1.0 / n) / ell
        spec = scipy.fft.fft(f, axis=-1)
    else:
        kappa = np.pi * np.arange(n // 2 + 1) / ell
        spec = scipy.fft.rfft(f, axis=-1)
    spec = -spec / (2.0 * np.pi * (r * r + kappa * kappa))
    u = scipy.fft.ifft(spec, axis=-1) if complex_input else scipy.fft.irfft(spec, n=n, axis=-1)
    return np.moveaxis(u, -1, axis)


def spectral_kernel(xi_mag: float, dz: float, ell: float) -> float:
    """Per-mode kernel at planar frequency |xi'| and vertical offset dz (reduced mod 2 ell)"""
    r = _check_mode(xi_mag)
    d = np.abs(reduce_dz(dz, ell))
    value = _mode_kernel(r, d, ell)
    return float(value) if np.ndim(value) == 0 else value


# --- the smooth part K2 ------------------------------------------------------


def _remainder(rho, d, ell: float):
    """Hankel integrand of K2 with the 1/rho pole removed; vanishes at rho = 0"""
    rho = np.asarray(rho, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    num = np.exp(-rho * (2.0 * ell - d)) + np.exp(-rho * (2.0 * ell + d))
    with np.errstate(divide="ignore", invalid="ignore"):
        g = -num / (FOUR_PI * (-np.expm1(-2.0 * ell * rho)))
        pole = np.exp(-ell * rho) / (FOUR_PI * ell * rho)
        out = g + pole
    return np.where(rho < 1e-12, 0.0, out)


def _pole_term(s, ell: float):
    """Finite part of -(1/(4 pi ell)) * integral of exp(-ell rho) J0(rho s) / rho"""
    s = np.asarray(s, dtype=np.float64)
    return (np.log(ell + np.hypot(ell, s)) - math.log(2.0) + EULER_GAMMA) / (FOUR_PI * ell)


def _panel_rule(lo: float, hi: float, width: float, order: int) -> tuple[NDArray, NDArray]:
    """Composite Gauss-Legendre nodes and weights on [lo, hi] with panels of at most width"""
    if hi <= lo:
        return np.empty(0), np.empty(0)
    count = max(1, int(math.ceil((hi - lo) / width)))
    edges = np.linspace(lo, hi, count + 1)
    x, w = np.polynomial.legendre.leggauss(order)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _panel_width(s_max: float, ell: float) -> float:
    # a quarter period of J0 per panel
    width = 0.5 / ell
    if s_max > 0.0:
        width = min(width, 0.5 * math.pi / s_max)
    return width


def _panel_integral(s: float, d: float, ell: float, lo: float, hi: float) -> tuple[float, float]:
    width = _panel_width(s, ell)
    results = []
    for order in (8, 16):
        nodes, weights = _panel_rule(lo, hi, width, order)
        results.append(float(np.sum(weights * _remainder(nodes, d, ell) * j0(nodes * s))))
    return results[1], abs(results[1] - results[0])


def k2_raw(offset, ell: float, tol: float = DEFAULT_QUAD_TOL) -> float:
    """K2 without the additive calibration constant"""
    x, y, z = (float(c) for c in offset)
    s = math.hypot(x, y)
    d = abs(float(reduce_dz(z, ell)))
    rho_max = REMAINDER_DECAY / ell
    split = min(SPLIT_RADIUS, rho_max)

    if s <= ADAPTIVE_MAX_DISTANCE:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            inner, inner_err = quad(
                lambda rho: float(_remainder(rho, d, ell)) * float(j0(rho * s)),
                0.0, split, epsabs=0.1 * tol, epsrel=0.0, limit=400,
            )
    else:
        inner, inner_err = _panel_integral(s, d, ell, 0.0, split)
    if inner_err > tol:
        raise QuadratureError(inner_err, tol, f"(inner part, s={s:.4g}, dz={d:.4g})")

    outer, outer_err = _panel_integral(s, d, ell, split, rho_max)
    if outer_err > tol:
        raise QuadratureError(outer_err, tol, f"(outer part, s={s:.4g}, dz={d:.4g})")

    return float(_pole_term(s, ell)) + inner + outer


def k2_eval(offset, ell: float, calibration: float | None = None, tol: float = DEFAULT_QUAD_TOL) -> float:
    """
    Smooth part K2 at a 3-vector offset, finite at offset 0.

    Args:
        offset: (x1, x2, x3); x3 is reduced into [-ell, ell)
        ell: half-period
        calibration: additive constant, defaults to reference_calibration(ell)
        tol: absolute tolerance for the radial quadrature

    Raises:
        QuadratureError: carrying the error estimate
    """
    c = reference_calibration(ell) if calibration is None else calibration
    return k2_raw(offset, ell, tol) + c


def k_eval(offset, ell: float, calibration: float | None = None, tol: float = DEFAULT_QUAD_TOL) -> KernelValue:
    """Split kernel value; raises SingularOffsetError (carrying k2) at offset 0"""
    x, y, z = (float(c) for c in offset)
    dz = float(reduce_dz(z, ell))
    dist = math.sqrt(x * x + y * y + dz * dz)
    k2 = k2_eval((x, y, dz), ell, calibration, tol)
    if dist == 0.0:
        raise SingularOffsetError(k2)
    return KernelValue(k1=-1.0 / (FOUR_PI * dist), k2=k2)


def _k2_raw_grid(s_values: NDArray, d_values: NDArray, ell: float, tol: float = DEFAULT_QUAD_TOL) -> NDArray:
    """K2 without calibration on the product of planar distances and |dz| values"""
    s_values = np.asarray(s_values, dtype=np.float64)
    d_values = np.asarray(d_values, dtype=np.float64)
    width = _panel_width(float(s_values.max(initial=0.0)), ell)
    rho_max = REMAINDER_DECAY / ell

    results = []
    for order in (8, 16):
        nodes, weights = _panel_rule(0.0, rho_max, width, order)
        weighted = weights[:, None] * _remainder(nodes[:, None], d_values[None, :], ell)
        out = np.empty((s_values.size, d_values.size))
        chunk = max(1, int(4_000_000 // max(nodes.size, 1)))
        for start in range(0, s_values.size, chunk):
            block = s_values[start:start + chunk]
            out[start:start + chunk] = j0(block[:, None] * nodes[None, :]) @ weighted
        results.append(out)

    estimate = float(np.abs(results[1] - results[0]).max(initial=0.0))
    if estimate > tol:
        raise QuadratureError(estimate, tol, "(table batch)")
    return results[1] + _pole_term(s_values, ell)[:, None]


# --- independent oracles -----------------------------------------------------


def image_sum_oracle(offset, ell: float, n_images: int = 10_000) -> float:
    """
    Renormalized image sum of -1/(4 pi |x - 2 ell n e3|).

    Images +n and -n are paired, so partial sums converge like 1/N^2 and one
    Richardson step (4 S_N - S_{N/2}) / 3 removes the leading tail.
    Equals the calibrated kernel plus (EULER_GAMMA - log(4 ell)) / (4 pi ell).
    """
    x, y, z = (float(c) for c in offset)
    dz = float(reduce_dz(z, ell))
    s2 = x * x + y * y
    r0 = math.sqrt(s2 + dz * dz)
    if r0 == 0.0:
        raise SingularOffsetError()
    n = np.arange(1, n_images + 1, dtype=np.float64)
    pairs = (
        -(1.0 / np.sqrt(s2 + (dz - 2.0 * ell * n) ** 2) + 1.0 / np.sqrt(s2 + (dz + 2.0 * ell * n) ** 2)) / FOUR_PI
        + 1.0 / (FOUR_PI * ell * n)
    )
    partial = np.cumsum(pairs[::-1])[::-1]  # tail sums, smallest terms first
    total_n = partial[0]
    total_half = total_n - partial[n_images // 2]
    head = -1.0 / (FOUR_PI * r0)
    return head + (4.0 * total_n - total_half) / 3.0


def mode_sum_oracle(offset, ell: float, n_modes: int | None = None) -> float:
    """Fourier series in x3: (1/(4 pi ell)) log s - (1/(2 pi ell)) sum K0(pi k s/ell) cos(pi k dz/ell)"""
    x, y, z = (float(c) for c in offset)
    s = math.hypot(x, y)
    if s == 0.0:
        raise SingularOffsetError()
    if n_modes is None:
        n_modes = min(1_000_000, int(math.ceil(40.0 * ell / (math.pi * s))) + 1)
    k = np.arange(1, n_modes + 1, dtype=np.float64)
    series = np.sum(k0(np.pi * k * s / ell) * np.cos(np.pi * k * z / ell))
    return math.log(s) / (FOUR_PI * ell) - series / (2.0 * math.pi * ell)


# --- cell averages -----------------------------------------------------------


def _newton_antiderivative(x, y, z):
    """F with d^3F/dxdydz = 1/r for x, y, z >= 0; vanishing factors are taken as 0"""
    r = np.sqrt(x * x + y * y + z * z)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(y * z > 0, y * z * np.log(x + r), 0.0)
        t2 = np.where(x * z > 0, x * z * np.log(y + r), 0.0)
        t3 = np.where(x * y > 0, x * y * np.log(z + r), 0.0)
        t4 = np.where(x > 0, 0.5 * x * x * np.arctan(y * z / (x * r)), 0.0)
        t5 = np.where(y > 0, 0.5 * y * y * np.arctan(x * z / (y * r)), 0.0)
        t6 = np.where(z > 0, 0.5 * z * z * np.arctan(x * y / (z * r)), 0.0)
    return t1 + t2 + t3 - t4 - t5 - t6


def _newton_box_origin(x, y, z):
    """Signed integral of 1/r over the box spanned by the origin and (x, y, z)"""
    a, b, c = np.abs(x), np.abs(y), np.abs(z)
    zero = np.zeros_like(a)
    value = (
        _newton_antiderivative(a, b, c)
        - _newton_antiderivative(zero, b, c)
        - _newton_antiderivative(a, zero, c)
        - _newton_antiderivative(a, b, zero)
    )
    return np.sign(x) * np.sign(y) * np.sign(z) * value


def box_average_k1(center, widths) -> NDArray | float:
    """Average of -1/(4 pi |x|) over boxes with given centers and side lengths (closed form)"""
    cx, cy, cz = (np.asarray(c, dtype=np.float64) for c in center)
    hx, hy, hz = (np.asarray(w, dtype=np.float64) for w in widths)
    total = 0.0
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                total = total + sx * sy * sz * _newton_box_origin(cx + 0.5 * sx * hx, cy + 0.5 * sy * hy, cz + 0.5 * sz * hz)
    value = -total / (FOUR_PI * hx * hy * hz)
    return float(value) if np.ndim(value) == 0 else value


def _log_antiderivative(x, y):
    """Integral of ln(x^2 + y^2) over [0, x] x [0, y] for x, y >= 0"""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(x * y > 0, x * y * np.log(x * x + y * y) - 3.0 * x * y, 0.0)
        t2 = np.where(x > 0, x * x * np.arctan(y / x), 0.0)
        t3 = np.where(y > 0, y * y * np.arctan(x / y), 0.0)
    return t1 + t2 + t3


def square_average_log(center, width: float) -> NDArray | float:
    """Average of (1/2pi) log|x'| over squares of side width (closed form)"""
    cx, cy = (np.asarray(c, dtype=np.float64) for c in center)
    total = 0.0
    for sx in (-1, 1):
        for sy in (-1, 1):
            px, py = cx + 0.5 * sx * width, cy + 0.5 * sy * width
            total = total + sx * sy * np.sign(px) * np.sign(py) * _log_antiderivative(np.abs(px), np.abs(py))
    value = total / (4.0 * math.pi * width * width)
    return float(value) if np.ndim(value) == 0 else value


# --- the table ---------------------------------------------------------------


def lattice_indices(n: int) -> NDArray[np.int64]:
    """|offset| in cells for FFT-ordered indices 0..n-1 of a circular axis"""
    i = np.arange(n)
    return np.minimum(i, n - i)


def estimate_table_mb(grid: GridSpec) -> float:
    n2 = (2 * grid.n_x) ** 2
    real = 2 * n2 * grid.n_z * 8
    spectra = 3 * n2 * (grid.n_z // 2 + 1) * 16
    return (real + spectra) / 2**20


def _canonical_keys(grid: GridSpec) -> tuple[NDArray, NDArray, NDArray]:
    """Canonical (max(|i|,|j|), min(|i|,|j|), |k|) index arrays for the lattice"""
    planar = lattice_indices(2 * grid.n_x)
    vertical = lattice_indices(grid.n_z)
    a = np.maximum(planar[:, None], planar[None, :])
    b = np.minimum(planar[:, None], planar[None, :])
    return a[:, :, None], b[:, :, None], vertical[None, None, :]


def _k1_canonical(grid: GridSpec, near_field_cells: int) -> NDArray:
    """K1 on canonical keys: cell averages for max(|i|,|j|) <= P, point values elsewhere"""
    n, half = grid.n_x, grid.n_z // 2
    h, hz = grid.h_x, grid.h_z
    a = np.arange(n + 1)[:, None, None]
    b = np.arange(n + 1)[None, :, None]
    k = np.arange(half + 1)[None, None, :]
    with np.errstate(divide="ignore"):
        values = -1.0 / (FOUR_PI * np.sqrt((a * h) ** 2 + (b * h) ** 2 + (k * hz) ** 2))

    p = min(near_field_cells, n)
    pa = np.arange(p + 1)[:, None, None]
    pb = np.arange(p + 1)[None, :, None]
    kk = np.arange(half + 1)[None, None, :].astype(np.float64)
    cz = kk * hz
    wz = np.full_like(cz, hz)
    # seam cell [ell - hz/2, ell]: mean over the half cell on the near side
    cz[..., -1] = grid.ell - 0.25 * hz
    wz[..., -1] = 0.5 * hz
    averages = box_average_k1((pa * h, pb * h, cz), (h, h, wz))
    values[: p + 1, : p + 1, :] = np.broadcast_to(averages, (p + 1, p + 1, half + 1))
    return values


def _k2_canonical(grid: GridSpec, near_field_cells: int, tol: float) -> NDArray:
    """K2 (uncalibrated) on canonical keys: 4x4x4 Gauss cell averages near 0, point values elsewhere"""
    n, half = grid.n_x, grid.n_z // 2
    h, hz = grid.h_x, grid.h_z

    a = np.arange(n + 1)
    s_grid = h * np.hypot(a[:, None], a[None, :])
    s_unique, s_inverse = np.unique(s_grid, return_inverse=True)
    d_values = np.arange(half + 1) * hz
    points = _k2_raw_grid(s_unique, d_values, grid.ell, tol)
    values = points[s_inverse.reshape(s_grid.shape)]

    p = min(near_field_cells, n)
    x, w = np.polynomial.legendre.leggauss(4)
    cells = np.arange(p + 1)
    px = (cells[:, None] + 0.5 * x[None, :]) * h  # (p+1, 4)
    s_cell = np.hypot(px[:, None, :, None], px[None, :, None, :])  # (p+1, p+1, 4, 4)
    zc = np.arange(half + 1)[:, None] * hz + 0.5 * hz * x[None, :]
    zc[-1] = grid.ell - 0.25 * hz + 0.25 * hz * x
    d_cell = np.abs(zc)  # (half+1, 4)

    s_u, s_inv = np.unique(s_cell, return_inverse=True)
    d_u, d_inv = np.unique(d_cell, return_inverse=True)
    samples = _k2_raw_grid(s_u, d_u, grid.ell, tol)
    gathered = samples[s_inv.reshape(s_cell.shape)[..., None, None], d_inv.reshape(d_cell.shape)[None, None, None, None]]
    # gathered: (p+1, p+1, 4, 4, half+1, 4)
    weights = 0.125 * w[:, None, None] * w[None, :, None] * w[None, None, :]
    averages = np.einsum("abijkl,ijl->abk", gathered, weights)
    values[: p + 1, : p + 1, :] = averages
    return values


def _expand(canonical: NDArray, grid: GridSpec) -> NDArray:
    a, b, k = _canonical_keys(grid)
    return np.ascontiguousarray(canonical[a, b, k])


def k1_lattice(grid: GridSpec, near_field_cells: int) -> NDArray:
    """Full K1 lattice in FFT order, shape (2N, 2N, N_z)"""
    return _expand(_k1_canonical(grid, near_field_cells), grid)


def extract_patch(lattice: NDArray, near_field_cells: int) -> NDArray:
    """Near-field block for offsets -P..P in both planar axes, shape (2P+1, 2P+1, N_z)"""
    idx = np.arange(-near_field_cells, near_field_cells + 1) % lattice.shape[0]
    return lattice[idx[:, None], idx[None, :], :].copy()


def insert_patch(lattice: NDArray, patch: NDArray) -> NDArray:
    p = (patch.shape[0] - 1) // 2
    idx = np.arange(-p, p + 1) % lattice.shape[0]
    out = lattice.copy()
    out[idx[:, None], idx[None, :], :] = patch
    return out


class KernelTable:
    """
    K1 and uncalibrated K2 on the convolution lattice with their spectra.

    Arrays are FFT-ordered of shape (2 N_x, 2 N_x, N_z): zero-padded planar offsets and
    circular x3 offsets. Immutable; with_calibration shares arrays and spectra.
    """

    def __init__(
        self,
        grid: GridSpec,
        k1: NDArray,
        k2_raw: NDArray,
        calibration_constant: float = 0.0,
        near_field_cells: int = 3,
        spectra: dict[str, NDArray] | None = None,
    ):
        expected = (2 * grid.n_x, 2 * grid.n_x, grid.n_z)
        if k1.shape != expected or k2_raw.shape != expected:
            raise GridError(f"kernel lattice must have shape {expected}")
        self.grid = grid
        self.k1 = np.asarray(k1, dtype=np.float64)
        self.k2_raw = np.asarray(k2_raw, dtype=np.float64)
        self.k1.setflags(write=False)
        self.k2_raw.setflags(write=False)
        self.calibration_constant = float(calibration_constant)
        self.near_field_cells = near_field_cells
        if spectra is None:
            spectra = {
                "k1": scipy.fft.rfftn(self.k1, axes=(0, 1, 2)),
                "k2_raw": scipy.fft.rfftn(self.k2_raw, axes=(0, 1, 2)),
            }
            spectra["total_raw"] = spectra["k1"] + spectra["k2_raw"]
            for array in spectra.values():
                array.setflags(write=False)
        self._spectra = spectra

    @property
    def ell(self) -> float:
        return self.grid.ell

    @property
    def k2(self) -> NDArray:
        return self.k2_raw + self.calibration_constant

    @property
    def total(self) -> NDArray:
        return self.k1 + self.k2

    def spectrum(self, part: Literal["k1", "k2_raw", "total_raw"]) -> NDArray:
        return self._spectra[part]

    def with_calibration(self, constant: float) -> "KernelTable":
        return KernelTable(self.grid, self.k1, self.k2_raw, constant, self.near_field_cells, self._spectra)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "KernelTable":
        shape = (2 * grid.n_x, 2 * grid.n_x, grid.n_z)
        return cls(grid, np.zeros(shape), np.zeros(shape), 0.0, 0)

    def lookup(self, di: int, dj: int, dk: int) -> KernelValue:
        """Entry at the lattice offset (di h_x, dj h_x, dk h_z), |di|, |dj| < 2 N_x"""
        n2 = 2 * self.grid.n_x
        i, j, k = di % n2, dj % n2, dk % self.grid.n_z
        return KernelValue(k1=float(self.k1[i, j, k]), k2=float(self.k2[i, j, k]))

    def offset_norms(self) -> NDArray:
        grid = self.grid
        planar = lattice_indices(2 * grid.n_x) * grid.h_x
        vertical = lattice_indices(grid.n_z) * grid.h_z
        return np.sqrt(planar[:, None, None] ** 2 + planar[None, :, None] ** 2 + vertical[None, None, :] ** 2)

    def near_patch(self) -> NDArray:
        return extract_patch(self.k1, self.near_field_cells)

    def crossover_radius(self) -> float:
        """Smallest R with K > 0 and K2 > 0 at every lattice offset of norm >= R"""
        norms = self.offset_norms()
        bad = (self.total <= 0.0) | (self.k2 <= 0.0)
        if not np.any(bad):
            return 0.0
        worst = norms[bad].max()
        beyond = norms[norms > worst]
        return float(beyond.min()) if beyond.size else float(worst) + self.grid.h_x

    def near_sup(self, radius: float) -> float:
        """sup |K2| over lattice offsets of norm < radius"""
        inside = self.offset_norms() < radius
        return float(np.abs(self.k2[inside]).max(initial=0.0))

    def metadata(self) -> KernelMetadata:
        norms = self.offset_norms()
        R = self.crossover_radius()
        far = (norms >= R) & (norms > 0.0)
        k2 = self.k2
        if np.any(far):
            logs = np.log1p(norms[far])
            ratios = k2[far] / logs
            log_constant = max(1.0, float(ratios.max()), float(1.0 / ratios.min()))
            if far.sum() >= 2 and np.ptp(logs) > 0:
                slope = float(np.polyfit(logs, k2[far], 1)[0])
            else:
                slope = 0.0
        else:
            log_constant, slope = 1.0, 0.0
        return KernelMetadata(
            ell=self.ell,
            shape=self.k1.shape,
            spacings=(self.grid.h_x, self.grid.h_x, self.grid.h_z),
            near_field_cells=self.near_field_cells,
            calibration_constant=self.calibration_constant,
            crossover_radius=R,
            log_constant=log_constant,
            asymptotic_slope=slope,
            near_sup=self.near_sup(R),
        )


def build_kernel_table(
    grid: GridSpec,
    near_field_cells: int = 3,
    calibration: float | None = None,
    tol: float = DEFAULT_QUAD_TOL,
    memory_limit_mb: float = MEMORY_LIMIT_MB,
) -> KernelTable:
    """
    Tabulate K1 and K2 on the zero-padded convolution lattice of grid.

    Values are computed once per canonical key (max(|i|,|j|), min(|i|,|j|), |k|), so the
    table is exactly symmetric under planar reflections, the planar swap and dz -> -dz.
    Cells with max(|i|,|j|) <= near_field_cells hold exact cell averages.

    Raises:
        MemoryBudgetError: before any allocation when the estimate exceeds the limit
    """
    required = estimate_table_mb(grid)
    if required > memory_limit_mb:
        raise MemoryBudgetError(required, memory_limit_mb)
    logger.info(f"Building kernel table ell={grid.ell} lattice={2 * grid.n_x}x{2 * grid.n_x}x{grid.n_z} (~{required:.0f} MB)")

    k1 = _expand(_k1_canonical(grid, near_field_cells), grid)
    k2 = _expand(_k2_canonical(grid, near_field_cells, tol), grid)
    constant = reference_calibration(grid.ell) if calibration is None else calibration
    return KernelTable(grid, k1, k2, constant, near_field_cells)


def table_oracle_spread(table: KernelTable, n_images: int = 10_000) -> float:
    """
    Spread of table total minus image sum over a few far-field lattice offsets.

    The two differ by a constant, so the spread measures table error alone.
    """
    grid = table.grid
    p = table.near_field_cells
    offsets = [(p + 1, 0, 0), (p + 2, p + 1, 1), (grid.n_x - 1, grid.n_x // 2, grid.n_z // 4)]
    diffs = []
    for i, j, k in offsets:
        point = (i * grid.h_x, j * grid.h_x, k * grid.h_z)
        diffs.append(table.lookup(i, j, k).total - image_sum_oracle(point, grid.ell, n_images))
    return float(max(diffs) - min(diffs))
