"""
Calibration of the additive kernel constant.
Fixes the constant by the 2D collapse identity: for x3-independent densities the slab
potential equals the planar potential with kernel (1/2pi) log|x'|.
"""

import hashlib
import logging
import sqlite3
import threading
from pathlib import Path
from typing import Optional

import numpy as np

from chainsolve.config import CALIBRATION_DB
from chainsolve.fields import Field, interior_mask, planar_radius_sq
from chainsolve.kernel import KernelTable, build_kernel_table, reference_calibration
from chainsolve.poisson import INTERIOR_FRACTION, apply_green, planar_log_potential
from chainsolve.resilience import get_table_cache
from chainsolve.schemas import CalibrationRecord, GridSpec, SymmetryTag

logger = logging.getLogger(__name__)

__all__ = [
    "CalibrationTracker",
    "calibrate_table",
    "calibrated_table",
    "collapse_error",
    "gaussian_density",
    "get_calibration_tracker",
    "reference_calibration",
    "validate_calibration",
]


def gaussian_density(grid: GridSpec, width: float) -> Field:
    """Planar test density exp(-|x'|^2 / width^2)"""
    return Field(grid, np.exp(-planar_radius_sq(grid) / width**2), SymmetryTag.RADIAL)


def collapse_error(table: KernelTable, density: Field, fraction: float = INTERIOR_FRACTION) -> float:
    """Relative interior L2 gap between K[extended density] and its planar log potential"""
    slab = apply_green(density.extend(), table).values
    planar = planar_log_potential(density, table.near_field_cells).values[:, :, None]
    mask = interior_mask(table.grid, fraction)
    gap = np.broadcast_to(slab - planar, mask.shape)[mask]
    ref = np.broadcast_to(planar, mask.shape)[mask]
    return float(np.linalg.norm(gap) / np.linalg.norm(ref))


def calibrate_table(
    table: KernelTable, width: float = 1.5, fraction: float = INTERIOR_FRACTION
) -> tuple[KernelTable, CalibrationRecord]:
    """
    Fit the additive constant on one Gaussian density.

    Returns:
        - Table carrying the fitted constant
        - Record with the analytic reference value for comparison
    """
    density = gaussian_density(table.grid, width)
    extended = density.extend()
    uncalibrated = apply_green(extended, table.with_calibration(0.0)).values
    planar = planar_log_potential(density, table.near_field_cells).values[:, :, None]
    mask = interior_mask(table.grid, fraction)
    mass = extended.cell_measure * float(extended.values.sum())
    constant = float(np.mean(np.broadcast_to(planar - uncalibrated, mask.shape)[mask]) / mass)

    reference = reference_calibration(table.ell)
    logger.info(f"Calibrated ell={table.ell}: c={constant:.12e} (analytic {reference:.12e})")
    return table.with_calibration(constant), CalibrationRecord(ell=table.ell, constant=constant, reference=reference)


def validate_calibration(table: KernelTable, width: float = 2.5, fraction: float = INTERIOR_FRACTION) -> float:
    """Collapse-identity error on a second, different density"""
    return collapse_error(table, gaussian_density(table.grid, width), fraction)


class CalibrationTracker:
    """Remembers fitted constants per grid and calibration width, optionally persisted to SQLite"""

    def __init__(self, db_path: Optional[str] = None):
        self.db_path = db_path
        self.records: dict[str, CalibrationRecord] = {}
        self._lock = threading.Lock()
        if db_path:
            Path(db_path).parent.mkdir(parents=True, exist_ok=True)
            self._init_db()

    def _init_db(self):
        with sqlite3.connect(self.db_path) as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS calibrations (
                    grid_hash TEXT PRIMARY KEY,
                    ell REAL NOT NULL,
                    constant REAL NOT NULL,
                    reference REAL NOT NULL,
                    validation_error REAL
                )
            """)

    def grid_hash(self, grid: GridSpec, near_field_cells: int, width: float = 1.5) -> str:
        return hashlib.sha256(f"{grid!r}:{near_field_cells}:{width!r}".encode()).hexdigest()[:16]

    def lookup(self, grid: GridSpec, near_field_cells: int, width: float = 1.5) -> Optional[CalibrationRecord]:
        key = self.grid_hash(grid, near_field_cells, width)
        with self._lock:
            if key in self.records:
                return self.records[key]
            if not self.db_path:
                return None
            with sqlite3.connect(self.db_path) as conn:
                row = conn.execute(
                    "SELECT ell, constant, reference, validation_error FROM calibrations WHERE grid_hash = ?",
                    (key,),
                ).fetchone()
            if row is None:
                return None
            record = CalibrationRecord(ell=row[0], constant=row[1], reference=row[2], validation_error=row[3])
            self.records[key] = record
            return record

    def record(self, grid: GridSpec, near_field_cells: int, record: CalibrationRecord, width: float = 1.5):
        key = self.grid_hash(grid, near_field_cells, width)
        with self._lock:
            self.records[key] = record
            if self.db_path:
                with sqlite3.connect(self.db_path) as conn:
                    conn.execute(
                        "INSERT OR REPLACE INTO calibrations VALUES (?, ?, ?, ?, ?)",
                        (key, record.ell, record.constant, record.reference, record.validation_error),
                    )

    def calibrate(
        self, table: KernelTable, width: float = 1.5, validation_width: float = 2.5
    ) -> tuple[KernelTable, CalibrationRecord]:
        known = self.lookup(table.grid, table.near_field_cells, width)
        if known is not None:
            return table.with_calibration(known.constant), known
        calibrated, record = calibrate_table(table, width)
        record = record.model_copy(update={"validation_error": validate_calibration(calibrated, validation_width)})
        self.record(table.grid, table.near_field_cells, record, width)
        return calibrated, record


# Global instance
_calibration_tracker: Optional[CalibrationTracker] = None


def get_calibration_tracker() -> CalibrationTracker:
    global _calibration_tracker
    if _calibration_tracker is None:
        _calibration_tracker = CalibrationTracker(CALIBRATION_DB or None)
    return _calibration_tracker


def calibrated_table(
    grid: GridSpec,
    near_field_cells: int = 3,
    calibration_width: float = 1.5,
    validation_width: float = 2.5,
    tol: float = 1e-11,
    memory_limit_mb: Optional[float] = None,
) -> KernelTable:
    """Build (or reuse) the kernel table for grid with its constant fitted numerically"""
    cache = get_table_cache()
    settings = {"calibration_width": calibration_width, "validation_width": validation_width, "tol": tol}
    table = cache.get(grid, near_field_cells, **settings)
    if table is not None:
        return table
    kwargs = {} if memory_limit_mb is None else {"memory_limit_mb": memory_limit_mb}
    raw = build_kernel_table(grid, near_field_cells, tol=tol, **kwargs)
    table, record = get_calibration_tracker().calibrate(raw, calibration_width, validation_width)
    if record.validation_error is not None:
        logger.info(f"Calibration check ell={grid.ell}: collapse error {record.validation_error:.3e}")
    cache.set(grid, near_field_cells, table, **settings)
    return table
