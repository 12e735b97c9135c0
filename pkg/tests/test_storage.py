import numpy as np
import pytest

from chainsolve import storage
from chainsolve.fields import Field
from chainsolve.resilience import GridError
from chainsolve.schemas import ScanResult, ScanRow, SymmetryTag, TraceRow


def test_kernel_dump_round_trip(tmp_path, small_table, small_grid):
    path = storage.save_kernel_table(small_table, tmp_path / "kernel.chnk")
    loaded = storage.load_kernel_table(path)
    assert loaded.grid == small_grid
    assert loaded.calibration_constant == small_table.calibration_constant
    assert loaded.near_field_cells == small_table.near_field_cells
    np.testing.assert_array_equal(loaded.k2_raw, small_table.k2_raw)
    np.testing.assert_array_equal(loaded.k1, small_table.k1)


def test_kernel_dump_checks_grid(tmp_path, small_table, small_grid):
    path = storage.save_kernel_table(small_table, tmp_path / "kernel.chnk")
    with pytest.raises(GridError):
        storage.load_kernel_table(path, small_grid.with_ell(2.0))


@pytest.mark.parametrize("content", [b"CHN", b"NOPE1" + bytes(64)])
def test_bad_dumps_rejected(tmp_path, content):
    path = tmp_path / "bad.bin"
    path.write_bytes(content)
    with pytest.raises(GridError):
        storage.load_kernel_table(path)
    with pytest.raises(GridError):
        storage.load_field(path)


def test_field_dump_round_trip(tmp_path, gaussian):
    path = storage.save_field(gaussian, tmp_path / "field.chnf")
    loaded = storage.load_field(path)
    assert loaded.grid == gaussian.grid
    assert loaded.symmetry == SymmetryTag.PLANAR_CONSTANT
    np.testing.assert_array_equal(loaded.values, gaussian.values)


def test_planar_fields_are_not_dumped(tmp_path, small_grid):
    with pytest.raises(GridError):
        storage.save_field(Field(small_grid, np.ones(small_grid.planar_shape)), tmp_path / "field.chnf")


def test_json_report(tmp_path):
    result = ScanResult(kappa=0.25, rows=[ScanRow(ell=1.0, c_r=0.4, two_ell_kappa=0.5)], margin=1e-3)
    path = storage.save_json(result, tmp_path / "nested" / "scan.json")
    assert storage.load_json(path) == result.model_dump(mode="json")


@pytest.fixture
def scan_rows():
    return [
        ScanRow(ell=0.5, c_r=0.1 + 0.2, c_G=1.0 / 3.0, c_planar_slab=0.3, two_ell_kappa=0.3, d3_radial=0.0, d3_g=0.5, g_defect=0.0),
        ScanRow(ell=1.0, two_ell_kappa=0.6, status="failed", error="no convergence after 10 iterations, gradient 1e-3"),
    ]


def test_scan_csv_round_trip(tmp_path, scan_rows):
    path = storage.write_scan_csv(scan_rows, tmp_path / "scan.csv")
    assert path.read_text().splitlines()[0] == ",".join(storage.SCAN_COLUMNS)
    assert storage.read_scan_csv(path) == scan_rows


def test_scan_rows_append(tmp_path, scan_rows):
    path = tmp_path / "scan.csv"
    assert storage.read_scan_csv(path) == []
    for row in scan_rows:
        storage.append_scan_row(row, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("ell,c_r")
    assert len(lines) == 3
    assert storage.read_scan_csv(path) == scan_rows


def test_trace_csv(tmp_path):
    rows = [TraceRow(iteration=1, phi=0.5, grad_norm=1e-2, step=1.0), TraceRow(iteration=2, phi=0.4, grad_norm=1e-4, step=0.5)]
    lines = storage.write_trace_csv(rows, tmp_path / "trace.csv").read_text().splitlines()
    assert lines == ["iter,phi,grad_norm,step", "1,0.5,0.01,1.0", "2,0.4,0.0001,0.5"]


def test_export_slice(tmp_path, gaussian, small_grid):
    lines = storage.export_slice(gaussian, tmp_path / "slice.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,x3,value"
    assert len(lines) == 1 + small_grid.n_x**2
    assert all(float(line.split(",")[2]) == 0.0 for line in lines[1:])


def test_plane_slice_bounds(gaussian):
    assert len(storage.plane_slice(gaussian, 0, 3)) == gaussian.grid.n_x * gaussian.grid.n_z
    with pytest.raises(GridError):
        storage.plane_slice(gaussian, 3, 0)
    with pytest.raises(GridError):
        storage.plane_slice(gaussian, 2, gaussian.grid.n_z)
