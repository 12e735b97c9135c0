"""Configuration for chainsolve."""

import configparser
import os
from pathlib import Path
from typing import Literal

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from chainsolve.resilience import ConfigError
from chainsolve.schemas import GridSpec, SolverConfig

load_dotenv()

# Logging level for the CLI
LOG_LEVEL = os.getenv("CHAINSOLVE_LOG_LEVEL", "INFO")

# Default output directory for run artifacts
OUT_DIR = os.getenv("CHAINSOLVE_OUT_DIR", "runs")

# FFT worker threads and parallel scan rows
THREADS = int(os.getenv("CHAINSOLVE_THREADS", "1"))

# Kernel tables larger than this are refused before allocation
MEMORY_LIMIT_MB = float(os.getenv("CHAINSOLVE_MEMORY_LIMIT_MB", "2048"))

# SQLite file for fitted calibration constants; empty keeps them in memory only
CALIBRATION_DB = os.getenv("CHAINSOLVE_CALIBRATION_DB", "")


class DomainSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    L: float = Field(default=12.0, gt=0.0)
    n_x: int = Field(default=64, ge=8)
    ell: float = Field(gt=0.0)
    n_z: int = Field(default=32, ge=8)


class PotentialSection(BaseModel):
    """a(x) = value - depth * exp(-|x'|^2 / width^2)"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["constant", "radial_well"] = "constant"
    value: float = 1.0
    depth: float = Field(default=0.0, ge=0.0)
    width: float = Field(default=1.0, gt=0.0)


class KernelSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    near_field_cells: int = Field(default=3, ge=1)
    quad_tol: float = Field(default=1e-11, gt=0.0)
    n_images: int = Field(default=10_000, ge=16)
    calibration_width: float = Field(default=1.5, gt=0.0)
    validation_width: float = Field(default=2.5, gt=0.0)
    memory_limit_mb: float = Field(default=MEMORY_LIMIT_MB, gt=0.0)


class ScanSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    ell_values: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0, 8.0])
    margin: float = Field(default=1e-3, ge=0.0, lt=1.0)


class NewtonianSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    support_radius: float = Field(default=1.0, gt=0.0)
    cells_per_radius: int = Field(default=5, ge=2)
    ell_multiples: list[float] = Field(default_factory=lambda: [2.0**k for k in range(1, 10)])


class RunConfig(BaseModel):
    """Validated run configuration"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    domain: DomainSection
    potential: PotentialSection = Field(default_factory=PotentialSection)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    kernel: KernelSection = Field(default_factory=KernelSection)
    scan: ScanSection = Field(default_factory=ScanSection)
    newtonian: NewtonianSection = Field(default_factory=NewtonianSection)

    @property
    def grid(self) -> GridSpec:
        d = self.domain
        try:
            return GridSpec(L=d.L, n_x=d.n_x, ell=d.ell, n_z=d.n_z)
        except ValidationError as e:
            raise ConfigError("domain", _first_message(e)) from e


SECTIONS: dict[str, type[BaseModel]] = {
    "domain": DomainSection,
    "potential": PotentialSection,
    "solver": SolverConfig,
    "kernel": KernelSection,
    "scan": ScanSection,
    "newtonian": NewtonianSection,
}

# Keys holding comma-separated lists
LIST_KEYS = {("scan", "ell_values"), ("newtonian", "ell_multiples")}


def _first_message(error: ValidationError) -> str:
    first = error.errors()[0]
    return first["msg"]


def _section_payload(name: str, items: dict[str, str]) -> dict:
    payload: dict = {}
    for key, raw in items.items():
        if (name, key) in LIST_KEYS:
            payload[key] = [float(v) for v in raw.replace(",", " ").split()]
        else:
            payload[key] = raw.strip()
    return payload


def parse_config(text: str) -> RunConfig:
    """
    Parse INI-style run configuration text.

    Args:
        text: Config file content with [domain], [potential], [solver], [kernel],
            [scan] and [newtonian] sections

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: naming the offending section.key
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive (L vs l)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError("config", str(e).splitlines()[0]) from e

    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(unknown[0], "unknown section")
    if not parser.has_section("domain") or not parser.has_option("domain", "ell"):
        raise ConfigError("domain.ell", "missing required key")

    sections: dict[str, BaseModel] = {}
    for name, model in SECTIONS.items():
        if not parser.has_section(name):
            continue
        try:
            payload = _section_payload(name, dict(parser.items(name)))
        except ValueError as e:
            raise ConfigError(name, f"bad list value: {e}") from e
        try:
            sections[name] = model(**payload)
        except ValidationError as e:
            first = e.errors()[0]
            key = ".".join(str(p) for p in first["loc"]) or "?"
            raise ConfigError(f"{name}.{key}", first["msg"]) from e

    config = RunConfig(**sections)
    config.grid  # validate geometry eagerly
    if config.potential.value - config.potential.depth <= 0.0:
        raise ConfigError("potential", "a_min <= 0: the potential must be bounded below by a positive constant")
    return config


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a run configuration file"""
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    return parse_config(path.read_text())
