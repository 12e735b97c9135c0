"""
Discrete fields on the truncated slab.

Grid layout: planar cell centres x_i = -L + (i + 1/2) h_x with zero extension beyond the
box, and x3 samples z_k = -ell + k h_z on a periodic circle. Planar-only fields carry the
same GridSpec with two-dimensional values.

One discrete pair is used everywhere: forward differences (staggered, zero-padded in x',
circular in x3) and the matching 3-point negative Laplacian, so that
<-Lap_h u, v> = <grad_h u, grad_h v> holds exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Literal

import numpy as np
import scipy.fft
from numpy.typing import NDArray
from scipy.sparse.linalg import LinearOperator, cg

from chainsolve.resilience import ConfigError, GridError, LinearSolveError
from chainsolve.schemas import GridSpec, SymmetryTag

if TYPE_CHECKING:
    from chainsolve.kernel import KernelTable

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Field:
    """Real samples on a slab grid (3D) or on its planar section (2D)"""
    grid: GridSpec
    values: NDArray[np.float64]
    symmetry: SymmetryTag = SymmetryTag.GENERAL

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape not in (self.grid.shape, self.grid.planar_shape):
            raise GridError(f"values of shape {values.shape} do not fit grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise GridError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "symmetry", SymmetryTag(self.symmetry))

    @property
    def is_planar(self) -> bool:
        return self.values.ndim == 2

    @property
    def cell_measure(self) -> float:
        return self.grid.cell_area if self.is_planar else self.grid.cell_volume

    def replace(self, values: NDArray, symmetry: SymmetryTag | None = None) -> "Field":
        return Field(self.grid, values, self.symmetry if symmetry is None else symmetry)

    def scaled(self, t: float) -> "Field":
        return self.replace(t * self.values)

    def extend(self) -> "Field":
        """x3-constant extension of a planar field to the slab"""
        if not self.is_planar:
            raise GridError("only planar fields can be extended")
        values = np.repeat(self.values[:, :, None], self.grid.n_z, axis=2)
        return Field(self.grid, values, SymmetryTag.PLANAR_CONSTANT)

    def __add__(self, other: "Field") -> "Field":
        _check_compatible(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_compatible(self, other)
        return Field(self.grid, self.values - other.values)

    def __neg__(self) -> "Field":
        return self.replace(-self.values)


def _check_compatible(u: Field, v: Field):
    if u.grid != v.grid or u.values.shape != v.values.shape:
        raise GridError(f"incompatible fields: {u.grid} {u.values.shape} vs {v.grid} {v.values.shape}")


def planar_coordinates(grid: GridSpec) -> NDArray[np.float64]:
    return -grid.L + (np.arange(grid.n_x) + 0.5) * grid.h_x


def vertical_coordinates(grid: GridSpec) -> NDArray[np.float64]:
    return -grid.ell + np.arange(grid.n_z) * grid.h_z


def coordinates(grid: GridSpec, planar: bool = False) -> tuple[NDArray, ...]:
    """Broadcastable coordinate arrays (x1, x2) or (x1, x2, x3)"""
    x = planar_coordinates(grid)
    if planar:
        return x[:, None], x[None, :]
    z = vertical_coordinates(grid)
    return x[:, None, None], x[None, :, None], z[None, None, :]


def planar_radius_sq(grid: GridSpec) -> NDArray[np.float64]:
    x1, x2 = coordinates(grid, planar=True)
    return x1 * x1 + x2 * x2


def radius(grid: GridSpec, planar: bool = False) -> NDArray[np.float64]:
    """|x| with the full 3D radius on slab grids"""
    if planar:
        return np.sqrt(planar_radius_sq(grid))
    x1, x2, x3 = coordinates(grid)
    return np.sqrt(x1 * x1 + x2 * x2 + x3 * x3)


def interior_mask(grid: GridSpec, fraction: float = 0.7, planar: bool = False) -> NDArray[np.bool_]:
    """Inner part |x'|_inf <= fraction * L of the planar box, full x3 range"""
    x = np.abs(planar_coordinates(grid)) <= fraction * grid.L + 1e-12 * grid.L
    mask = x[:, None] & x[None, :]
    if planar:
        return mask
    return np.repeat(mask[:, :, None], grid.n_z, axis=2)


@dataclass(frozen=True)
class PotentialSpec:
    """Coefficient a(x) = evaluator(|x'|^2, x3), radial in x'"""
    evaluator: Callable[[NDArray, NDArray], NDArray]
    a_min: float
    x3_independent: bool = True
    label: str = "custom"

    def __post_init__(self):
        if not self.a_min > 0.0:
            raise ConfigError("potential", f"a_min must be positive, got {self.a_min}")

    @classmethod
    def constant(cls, value: float = 1.0) -> "PotentialSpec":
        return cls(lambda r2, z: np.full(np.broadcast(r2, z).shape, float(value)), value, True, f"constant({value})")

    @classmethod
    def radial_well(cls, value: float, depth: float, width: float) -> "PotentialSpec":
        def evaluator(r2, z):
            return np.broadcast_to(value - depth * np.exp(-r2 / width**2), np.broadcast(r2, z).shape)
        return cls(evaluator, value - depth, True, f"radial_well({value}, {depth}, {width})")

    @classmethod
    def from_section(cls, section) -> "PotentialSpec":
        if section.kind == "constant":
            return cls.constant(section.value)
        return cls.radial_well(section.value, section.depth, section.width)

    def sample(self, grid: GridSpec, planar: bool = False) -> NDArray[np.float64]:
        r2 = planar_radius_sq(grid)
        if planar:
            values = np.asarray(self.evaluator(r2, np.zeros(1)), dtype=np.float64).reshape(grid.planar_shape)
        else:
            values = np.asarray(
                self.evaluator(r2[:, :, None], vertical_coordinates(grid)[None, None, :]), dtype=np.float64
            ).reshape(grid.shape)
        if values.min() < self.a_min * (1.0 - 1e-12):
            raise ConfigError("potential", f"sampled a(x) = {values.min():.4g} below a_min = {self.a_min:.4g}")
        return values


# --- discrete operator pair ---------------------------------------------------


def forward_differences(values: NDArray, grid: GridSpec) -> list[NDArray]:
    """Staggered forward differences: N+1 per planar axis (virtual zeros), N_z circular in x3"""
    diffs = []
    for axis in (0, 1):
        pad = [(0, 0)] * values.ndim
        pad[axis] = (1, 1)
        padded = np.pad(values, pad)
        diffs.append(np.diff(padded, axis=axis) / grid.h_x)
    if values.ndim == 3:
        diffs.append((np.roll(values, -1, axis=2) - values) / grid.h_z)
    return diffs


def neg_laplacian(values: NDArray, grid: GridSpec) -> NDArray:
    """3-point -Lap_h, adjoint partner of forward_differences"""
    out = np.zeros_like(values)
    for axis in (0, 1):
        pad = [(0, 0)] * values.ndim
        pad[axis] = (1, 1)
        padded = np.pad(values, pad)
        lo = np.take(padded, np.arange(0, values.shape[axis]), axis=axis)
        hi = np.take(padded, np.arange(2, values.shape[axis] + 2), axis=axis)
        out += (2.0 * values - lo - hi) / grid.h_x**2
    if values.ndim == 3:
        out += (2.0 * values - np.roll(values, 1, axis=2) - np.roll(values, -1, axis=2)) / grid.h_z**2
    return out


def neg_laplacian_4th(values: NDArray, grid: GridSpec) -> NDArray:
    """5-point fourth-order -Lap_h; used to measure truncation error of discrete solutions"""
    out = np.zeros_like(values)
    for axis in (0, 1):
        pad = [(0, 0)] * values.ndim
        pad[axis] = (2, 2)
        padded = np.pad(values, pad)
        n = values.shape[axis]
        s = [np.take(padded, np.arange(k, k + n), axis=axis) for k in range(5)]
        out += (s[0] - 16.0 * s[1] + 30.0 * s[2] - 16.0 * s[3] + s[4]) / (12.0 * grid.h_x**2)
    if values.ndim == 3:
        r = lambda k: np.roll(values, k, axis=2)  # noqa: E731
        out += (r(2) - 16.0 * r(1) + 30.0 * values - 16.0 * r(-1) + r(-2)) / (12.0 * grid.h_z**2)
    return out


class HelmholtzOperator:
    """A = -Lap_h + a with a DST/FFT fast solver for the mean coefficient"""

    def __init__(self, grid: GridSpec, a_values: NDArray, rtol: float = 1e-12, maxiter: int = 200):
        self.grid = grid
        self.a = np.asarray(a_values, dtype=np.float64)
        self.ndim = self.a.ndim
        self.rtol = rtol
        self.maxiter = maxiter
        self.a_mean = float(self.a.mean())
        self.constant = bool(np.ptp(self.a) <= 1e-14 * max(1.0, abs(self.a_mean)))

        n = grid.n_x
        lam_x = (2.0 - 2.0 * np.cos(np.pi * (np.arange(n) + 1) / (n + 1))) / grid.h_x**2
        lam = lam_x[:, None] + lam_x[None, :]
        if self.ndim == 3:
            k = np.arange(grid.n_z // 2 + 1)
            lam_z = (2.0 - 2.0 * np.cos(2.0 * np.pi * k / grid.n_z)) / grid.h_z**2
            lam = lam[:, :, None] + lam_z[None, None, :]
        self.eigenvalues = lam

    def apply(self, values: NDArray) -> NDArray:
        return neg_laplacian(values, self.grid) + self.a * values

    def precondition(self, values: NDArray) -> NDArray:
        """Exact inverse of -Lap_h + mean(a)"""
        spec = scipy.fft.dstn(values, type=1, axes=(0, 1), norm="ortho")
        if self.ndim == 3:
            spec = scipy.fft.rfft(spec, axis=2)
            spec = spec / (self.eigenvalues + self.a_mean)
            spec = scipy.fft.irfft(spec, n=self.grid.n_z, axis=2)
        else:
            spec = spec / (self.eigenvalues + self.a_mean)
        return scipy.fft.idstn(spec, type=1, axes=(0, 1), norm="ortho")

    def solve(self, rhs: NDArray) -> NDArray:
        """Solve A x = rhs; preconditioned CG unless a is constant"""
        if self.constant:
            return self.precondition(rhs)
        shape = rhs.shape
        size = rhs.size
        op = LinearOperator((size, size), matvec=lambda v: self.apply(v.reshape(shape)).ravel(), dtype=np.float64)
        pre = LinearOperator((size, size), matvec=lambda v: self.precondition(v.reshape(shape)).ravel(), dtype=np.float64)

        iterations = 0

        def count(_):
            nonlocal iterations
            iterations += 1

        x, info = cg(op, rhs.ravel(), rtol=self.rtol, atol=0.0, maxiter=self.maxiter, M=pre, callback=count)
        x = x.reshape(shape)
        if info != 0:
            b_norm = np.linalg.norm(rhs) or 1.0
            residual = float(np.linalg.norm(rhs - self.apply(x)) / b_norm)
            raise LinearSolveError(residual, iterations)
        logger.debug(f"CG converged in {iterations} iterations")
        return x


# --- norms -------------------------------------------------------------------


def inner_a(u: Field, v: Field, a: PotentialSpec) -> float:
    """<u, v>_a = integral of a u v + grad u . grad v"""
    _check_compatible(u, v)
    a_values = a.sample(u.grid, planar=u.is_planar)
    grads = sum(np.sum(du * dv) for du, dv in zip(forward_differences(u.values, u.grid), forward_differences(v.values, v.grid)))
    return float(u.cell_measure * (np.sum(a_values * u.values * v.values) + grads))


def norm_a(u: Field, a: PotentialSpec) -> float:
    return float(np.sqrt(max(inner_a(u, u, a), 0.0)))


def gradient_energy(u: Field) -> float:
    """Integral of |grad_h u|^2"""
    return float(u.cell_measure * sum(np.sum(d * d) for d in forward_differences(u.values, u.grid)))


def log_weight_norm(u: Field) -> float:
    """|u|_* = (integral of log(1+|x|) u^2)^(1/2)"""
    weight = np.log1p(radius(u.grid, planar=u.is_planar))
    return float(np.sqrt(u.cell_measure * np.sum(weight * u.values**2)))


def lp_norm(u: Field, p: float) -> float:
    if p < 1.0:
        raise ValueError(f"lp_norm needs p >= 1, got {p}")
    if np.isinf(p):
        return float(np.abs(u.values).max())
    return float((u.cell_measure * np.sum(np.abs(u.values) ** p)) ** (1.0 / p))


# --- convolution -------------------------------------------------------------


def convolve_with_table(
    f: Field, table: "KernelTable", part: Literal["total", "k1", "k2"] = "total"
) -> Field:
    """
    Integral of K(x - y) f(y) dy as a discrete convolution.

    The planar directions are zero-padded to 2N (linear convolution), x3 is circular.
    The additive calibration constant enters as c * (integral of f).
    """
    if f.is_planar:
        raise GridError("slab convolution needs a 3D field")
    if table.grid != f.grid:
        raise GridError(f"kernel table grid {table.grid} does not match field grid {f.grid}")
    n = f.grid.n_x
    padded_shape = (2 * n, 2 * n, f.grid.n_z)
    spec_f = scipy.fft.rfftn(f.values, s=padded_shape, axes=(0, 1, 2))

    if part == "k1":
        spectrum = table.spectrum("k1")
    elif part == "k2":
        spectrum = table.spectrum("k2_raw")
    else:
        spectrum = table.spectrum("total_raw")

    out = scipy.fft.irfftn(spec_f * spectrum, s=padded_shape, axes=(0, 1, 2))[:n, :n, :]
    out *= f.cell_measure
    if part != "k1" and table.calibration_constant != 0.0:
        out += table.calibration_constant * f.cell_measure * f.values.sum()
    symmetry = f.symmetry if f.symmetry in (SymmetryTag.RADIAL, SymmetryTag.PLANAR_CONSTANT) else SymmetryTag.GENERAL
    return Field(f.grid, out, symmetry)


def direct_convolution(f: Field, table: "KernelTable") -> NDArray:
    """O(N^2) reference sum of the same discrete convolution"""
    grid = f.grid
    n, nz = grid.n_x, grid.n_z
    kernel = table.total
    out = np.zeros(grid.shape)
    idx = np.arange(n)
    kz = np.arange(nz)
    for i in range(n):
        di = (i - idx) % (2 * n)
        for j in range(n):
            dj = (j - idx) % (2 * n)
            block = kernel[di[:, None], dj[None, :], :]
            for k in range(nz):
                dk = (k - kz) % nz
                out[i, j, k] = np.sum(block[:, :, dk] * f.values)
    return out * f.cell_measure
