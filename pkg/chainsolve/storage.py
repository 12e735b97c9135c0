"""File storage for run artifacts: binary dumps, JSON reports and CSV tables."""

import csv
import json
import logging
import math
import struct
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np
from pydantic import BaseModel

from chainsolve.fields import Field, coordinates
from chainsolve.kernel import KernelTable, insert_patch, k1_lattice
from chainsolve.resilience import GridError
from chainsolve.schemas import (
    SYMMETRY_CODES,
    GridSpec,
    NewtonianRow,
    ScanRow,
    TraceRow,
)

logger = logging.getLogger(__name__)

KERNEL_MAGIC = b"CHNK1"
KERNEL_HEADER = struct.Struct("<5sdiiidddd")

FIELD_MAGIC = b"CHNF1"
FIELD_HEADER = struct.Struct("<5sddiiB")

FLOAT = np.dtype("<f8")

SCAN_COLUMNS = ["ell", "c_r", "c_G", "c_planar_slab", "two_ell_kappa", "gap", "d3_radial", "d3_g", "g_defect", "status", "error"]


def _prepare(path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# --- binary dumps --------------------------------------------------------------


def save_kernel_table(table: KernelTable, path: str | Path) -> Path:
    """Header, uncalibrated K2 lattice, then the K1 near-field patch"""
    path = _prepare(path)
    grid = table.grid
    header = KERNEL_HEADER.pack(
        KERNEL_MAGIC,
        grid.ell,
        *table.k2_raw.shape,
        grid.h_x,
        grid.h_x,
        grid.h_z,
        table.calibration_constant,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(table.k2_raw, dtype=FLOAT).tobytes())
        f.write(np.ascontiguousarray(table.near_patch(), dtype=FLOAT).tobytes())
    logger.info(f"Saved kernel table to {path}")
    return path


def load_kernel_table(path: str | Path, grid: Optional[GridSpec] = None) -> KernelTable:
    """
    Read a kernel dump.

    The far-field K1 is recomputed from the spacings; pass the original grid to
    reproduce it bit-exactly when its half-extent is not recoverable from h_x.
    """
    data = Path(path).read_bytes()
    if len(data) < KERNEL_HEADER.size:
        raise GridError(f"{path}: truncated kernel header")
    magic, ell, n1, n2, nz, h1, _, hz, constant = KERNEL_HEADER.unpack_from(data)
    if magic != KERNEL_MAGIC:
        raise GridError(f"{path}: not a kernel dump (magic {magic!r})")
    if grid is None:
        grid = GridSpec(L=0.5 * h1 * (n1 // 2), n_x=n1 // 2, ell=ell, n_z=nz)
    elif (2 * grid.n_x, 2 * grid.n_x, grid.n_z) != (n1, n2, nz) or grid.ell != ell:
        raise GridError(f"{path}: lattice {(n1, n2, nz)} does not match grid {grid}")

    offset = KERNEL_HEADER.size
    count = n1 * n2 * nz
    k2_raw = np.frombuffer(data, dtype=FLOAT, count=count, offset=offset).reshape(n1, n2, nz)
    offset += count * FLOAT.itemsize

    remaining = (len(data) - offset) // FLOAT.itemsize
    side = math.isqrt(remaining // nz)
    if side * side * nz != remaining or side % 2 == 0:
        raise GridError(f"{path}: near-field patch of {remaining} values is not a (2P+1)^2 x N_z block")
    patch = np.frombuffer(data, dtype=FLOAT, count=remaining, offset=offset).reshape(side, side, nz)
    near_field_cells = (side - 1) // 2

    k1 = insert_patch(k1_lattice(grid, near_field_cells), patch)
    return KernelTable(grid, k1, k2_raw.astype(np.float64), constant, near_field_cells)


def save_field(u: Field, path: str | Path) -> Path:
    if u.is_planar:
        raise GridError("field dumps hold slab fields; extend planar fields first")
    path = _prepare(path)
    grid = u.grid
    header = FIELD_HEADER.pack(FIELD_MAGIC, grid.L, grid.ell, grid.n_x, grid.n_z, SYMMETRY_CODES[u.symmetry])
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(u.values, dtype=FLOAT).tobytes())
    return path


def load_field(path: str | Path) -> Field:
    data = Path(path).read_bytes()
    if len(data) < FIELD_HEADER.size:
        raise GridError(f"{path}: truncated field header")
    magic, L, ell, n_x, n_z, code = FIELD_HEADER.unpack_from(data)
    if magic != FIELD_MAGIC:
        raise GridError(f"{path}: not a field dump (magic {magic!r})")
    tags = {v: k for k, v in SYMMETRY_CODES.items()}
    if code not in tags:
        raise GridError(f"{path}: unknown symmetry code {code}")
    grid = GridSpec(L=L, n_x=n_x, ell=ell, n_z=n_z)
    count = n_x * n_x * n_z
    if len(data) - FIELD_HEADER.size != count * FLOAT.itemsize:
        raise GridError(f"{path}: expected {count} samples")
    values = np.frombuffer(data, dtype=FLOAT, count=count, offset=FIELD_HEADER.size).reshape(grid.shape)
    return Field(grid, values, tags[code])


# --- JSON ----------------------------------------------------------------------


def save_json(payload: BaseModel | dict[str, Any], path: str | Path) -> Path:
    path = _prepare(path)
    data = payload.model_dump(mode="json") if isinstance(payload, BaseModel) else payload
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
    return path


def load_json(path: str | Path) -> dict[str, Any]:
    with open(path, "r") as f:
        return json.load(f)


# --- CSV -----------------------------------------------------------------------


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path: str | Path, header: list[str], rows: Iterable[list[Any]]) -> Path:
    path = _prepare(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def write_trace_csv(trace: list[TraceRow], path: str | Path) -> Path:
    return _write_rows(path, ["iter", "phi", "grad_norm", "step"], ([r.iteration, r.phi, r.grad_norm, r.step] for r in trace))


def write_newtonian_csv(rows: list[NewtonianRow], path: str | Path) -> Path:
    return _write_rows(path, ["ell", "D_ell", "D_inf", "rel_err"], ([r.ell, r.D_ell, r.D_inf, r.rel_err] for r in rows))


def _scan_values(row: ScanRow) -> list[Any]:
    return [
        row.ell,
        row.c_r,
        row.c_G,
        row.c_planar_slab,
        row.two_ell_kappa,
        row.gap,
        row.d3_radial,
        row.d3_g,
        row.g_defect,
        row.status,
        row.error,
    ]


def write_scan_csv(rows: list[ScanRow], path: str | Path) -> Path:
    return _write_rows(path, SCAN_COLUMNS, (_scan_values(r) for r in rows))


def append_scan_row(row: ScanRow, path: str | Path):
    """Append one row, writing the header first for a new file"""
    path = _prepare(path)
    new = not path.exists()
    with open(path, "a", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if new:
            writer.writerow(SCAN_COLUMNS)
        writer.writerow([_cell(v) for v in _scan_values(row)])


def read_scan_csv(path: str | Path) -> list[ScanRow]:
    """Rows of a scan CSV; a missing file reads as empty"""
    path = Path(path)
    if not path.exists():
        return []
    rows = []
    with open(path, newline="") as f:
        for record in csv.DictReader(f):
            payload = {k: (v if v != "" else None) for k, v in record.items() if k != "gap"}
            rows.append(ScanRow(**payload))
    return rows


def plane_slice(u: Field, axis: int, index: int) -> list[tuple[float, float, float, float]]:
    """(x1, x2, x3, value) for the plane where coordinate `axis` has grid index `index`"""
    if u.is_planar:
        raise GridError("plane slices are taken from slab fields")
    if axis not in (0, 1, 2) or not 0 <= index < u.values.shape[axis]:
        raise GridError(f"no plane {index} along axis {axis} for shape {u.values.shape}")
    x1, x2, x3 = (np.broadcast_to(c, u.grid.shape) for c in coordinates(u.grid))
    take = [slice(None)] * 3
    take[axis] = index
    take = tuple(take)
    return list(
        zip(
            x1[take].ravel().tolist(),
            x2[take].ravel().tolist(),
            x3[take].ravel().tolist(),
            u.values[take].ravel().tolist(),
        )
    )


def export_slice(u: Field, path: str | Path, axis: int = 2, index: Optional[int] = None) -> Path:
    """Write one plane of u as CSV; the default is the x3 = 0 plane"""
    if index is None:
        index = u.grid.n_z // 2 if axis == 2 else u.grid.n_x // 2
    return _write_rows(path, ["x1", "x2", "x3", "value"], (list(r) for r in plane_slice(u, axis, index)))

