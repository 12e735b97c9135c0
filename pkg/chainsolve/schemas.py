"""
Typed records for chainsolve.
Grid geometry, energies, solver settings and reports as Pydantic models.
"""

import math
from enum import Enum
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

# Planar transform convention (1/2pi) * integral of exp(-i x.xi)
FOURIER_PREFACTOR = 1.0 / (2.0 * math.pi)


class SymmetryTag(str, Enum):
    GENERAL = "general"
    RADIAL = "radial"
    G_INVARIANT = "g_invariant"
    PLANAR_CONSTANT = "planar_constant"


# Byte codes used in the field dump header
SYMMETRY_CODES: dict[SymmetryTag, int] = {
    SymmetryTag.GENERAL: 0,
    SymmetryTag.RADIAL: 1,
    SymmetryTag.G_INVARIANT: 2,
    SymmetryTag.PLANAR_CONSTANT: 3,
}


class SlabParams(BaseModel):
    """Half-period of the slab and the planar transform convention"""
    model_config = ConfigDict(frozen=True)

    ell: float = Field(gt=0.0, description="half-period in x3")
    fourier_prefactor: float = FOURIER_PREFACTOR

    @model_validator(mode="after")
    def _fixed_convention(self):
        if not math.isclose(self.fourier_prefactor, FOURIER_PREFACTOR, rel_tol=0.0, abs_tol=1e-15):
            raise ValueError("fourier_prefactor is fixed to 1/(2 pi)")
        return self


class GridSpec(BaseModel):
    """Truncated slab grid: cell-centred planar box |x'|_inf <= L, periodic x3 in [-ell, ell)"""
    model_config = ConfigDict(frozen=True)

    L: float = Field(gt=0.0, description="planar half-extent")
    n_x: int = Field(ge=8, description="planar points per axis")
    ell: float = Field(gt=0.0, description="half-period in x3")
    n_z: int = Field(ge=8, description="points per period in x3")

    @model_validator(mode="after")
    def _even_resolution(self):
        if self.n_x % 2 or self.n_z % 2:
            raise ValueError(f"n_x and n_z must be even, got n_x={self.n_x}, n_z={self.n_z}")
        return self

    @property
    def h_x(self) -> float:
        return 2.0 * self.L / self.n_x

    @property
    def h_z(self) -> float:
        return 2.0 * self.ell / self.n_z

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_x, self.n_x, self.n_z)

    @property
    def planar_shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_x)

    @property
    def cell_volume(self) -> float:
        return self.h_x * self.h_x * self.h_z

    @property
    def cell_area(self) -> float:
        return self.h_x * self.h_x

    def with_ell(self, ell: float, n_z: int | None = None) -> "GridSpec":
        """Same planar grid on a slab of another half-period"""
        return GridSpec(L=self.L, n_x=self.n_x, ell=ell, n_z=n_z or self.n_z)


class KernelValue(BaseModel):
    """Split value of the slab kernel at one offset"""
    k1: float
    k2: float

    @property
    def total(self) -> float:
        return self.k1 + self.k2


class KernelMetadata(BaseModel):
    """Summary of a kernel table"""
    ell: float
    shape: tuple[int, int, int]
    spacings: tuple[float, float, float]
    near_field_cells: int
    calibration_constant: float
    crossover_radius: float = Field(description="R: K > 0 and K2 > 0 for lattice offsets beyond R")
    log_constant: float = Field(ge=1.0, description="C_K: 1/C_K <= K2/log(1+|o|) <= C_K beyond R")
    asymptotic_slope: float = Field(description="least-squares slope of K2 against log(1+|o|)")
    near_sup: float = Field(default=0.0, ge=0.0, description="sup |K2| over offsets of norm below R")


class EnergyBreakdown(BaseModel):
    """Quadratic and quartic parts of the energy functional"""
    norm_a_sq: float
    V1: float
    V2: float
    V0: float
    log_norm_sq: float
    phi: float

    @classmethod
    def assemble(cls, norm_a_sq: float, V1: float, V2: float, log_norm_sq: float) -> "EnergyBreakdown":
        V0 = V1 + V2
        return cls(
            norm_a_sq=norm_a_sq,
            V1=V1,
            V2=V2,
            V0=V0,
            log_norm_sq=log_norm_sq,
            phi=0.5 * norm_a_sq + 0.25 * V0,
        )


class NehariScale(BaseModel):
    """Explicit rescale onto the Nehari manifold"""
    t_u: float = Field(ge=0.0)
    defined: bool


class BilinearReport(BaseModel):
    """Both sides of the bilinear-form estimates with measured constants"""
    b1: float
    b1_bound: float
    b2: float
    b2_upper_bound: float
    b2_lower_bound: float
    constants: dict[str, float] = Field(default_factory=dict)

    @property
    def margins(self) -> dict[str, float]:
        return {
            "b1": self.b1_bound - abs(self.b1),
            "b2_upper": self.b2_upper_bound - abs(self.b2),
            "b2_lower": self.b2 - self.b2_lower_bound,
        }

    @property
    def holds(self) -> bool:
        return all(m >= 0.0 for m in self.margins.values())


class MountainReport(BaseModel):
    """Measured radius of the mountain-pass geometry"""
    beta: float
    samples: int
    min_phi: float
    min_nehari_derivative: float


class SolverConfig(BaseModel):
    """Descent settings for one ground-state computation"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    symmetry: Literal["radial", "g_invariant", "planar"] = "radial"
    max_iters: int = Field(default=3000, ge=1)
    tol_g: float = Field(default=1e-6, gt=0.0)
    initial_step: float = Field(default=1.0, gt=0.0)
    armijo_factor: float = Field(default=0.5, gt=0.0, lt=1.0)
    sufficient_decrease: float = Field(default=1e-4, gt=0.0, lt=1.0)
    momentum: bool = Field(default=True, description="extrapolate along the previous move, restarting when Phi would not drop")
    seed_width: float = Field(default=1.0, gt=0.0)
    seed_width_z: float = Field(default=1.0, gt=0.0)
    seed_amplitude: float = Field(default=1.0, gt=0.0)
    restarts: int = Field(default=2, ge=1)
    random_seed: int = 20240601
    perturbation: float = Field(default=0.05, ge=0.0)
    max_width_halvings: int = Field(default=6, ge=0)
    cg_rtol: float = Field(default=1e-12, gt=0.0)
    cg_maxiter: int = Field(default=200, ge=1)


class TraceRow(BaseModel):
    """One accepted descent iteration"""
    iteration: int
    phi: float
    grad_norm: float
    step: float
    nehari_residual: float = 0.0


class SolveReport(BaseModel):
    """Ground-state result; residuals are recomputed from the returned field"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    symmetry: str
    energy: EnergyBreakdown
    grad_norm: float
    nehari_residual: float
    pde_residual: float
    d3_fraction: float | None = None
    iterations: int
    restart_phis: list[float] = Field(default_factory=list)
    restart_dispersion: float = 0.0
    sign_pair_phi: float | None = None
    trace: list[TraceRow] = Field(default_factory=list)
    field: Any = Field(default=None, exclude=True)


class ScanRow(BaseModel):
    """One half-period of the symmetry-breaking scan"""
    ell: float
    c_r: float | None = None
    c_G: float | None = None
    c_planar_slab: float | None = None
    two_ell_kappa: float
    d3_radial: float | None = None
    d3_g: float | None = None
    g_defect: float | None = Field(default=None, description="max |sigma u - u| / max |u| of the G-class minimizer")
    status: Literal["ok", "failed"] = "ok"
    error: str | None = None

    @property
    def gap(self) -> float | None:
        return None if self.c_r is None else self.c_r - self.two_ell_kappa


class ScanResult(BaseModel):
    """All scan rows plus the detected transition"""
    kappa: float
    rows: list[ScanRow]
    ell_star: float | None = None
    margin: float
    ell_bound: float | None = None


class NewtonianRow(BaseModel):
    """Slab energy of a fixed bump against its free-space limit"""
    ell: float
    D_ell: float
    D_inf: float
    rel_err: float


class CalibrationRecord(BaseModel):
    """Additive kernel constant fixed by the 2D collapse identity"""
    ell: float
    constant: float
    reference: float
    validation_error: float | None = None


class PairReport(BaseModel):
    """Residuals of the Schroedinger-Poisson pair (u, w = K[u^2])"""
    choquard_residual: float
    poisson_residual: float
    growth_constant: float


class CriterionResult(BaseModel):
    """Outcome of one acceptance criterion"""
    id: str
    title: str
    passed: bool
    measured: dict[str, Any] = Field(default_factory=dict)
    seconds: float = 0.0


class VerifySummary(BaseModel):
    """Acceptance-suite summary"""
    passed: bool
    criteria: list[CriterionResult]
