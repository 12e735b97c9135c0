import pytest

from chainsolve import calibration
from chainsolve.calibration import (
    CalibrationTracker,
    calibrate_table,
    calibrated_table,
    get_calibration_tracker,
    validate_calibration,
)
from chainsolve.kernel import reference_calibration
from chainsolve.schemas import CalibrationRecord


def test_fitted_constant_matches_reference(small_table):
    table, record = calibrate_table(small_table)
    assert record.reference == reference_calibration(1.0)
    assert record.constant == pytest.approx(record.reference, abs=2e-3)
    assert table.calibration_constant == record.constant
    assert validate_calibration(table) < 1e-2


def test_tracker_persists_to_sqlite(tmp_path, small_grid):
    db = tmp_path / "calibration.db"
    record = CalibrationRecord(ell=1.0, constant=0.01, reference=0.009, validation_error=1e-4)
    CalibrationTracker(str(db)).record(small_grid, 3, record)
    assert CalibrationTracker(str(db)).lookup(small_grid, 3) == record
    assert CalibrationTracker(str(db)).lookup(small_grid, 2) is None


def test_tracker_reuses_known_constant(small_table):
    tracker = CalibrationTracker()
    first, record = tracker.calibrate(small_table)
    again, known = tracker.calibrate(small_table.with_calibration(0.0))
    assert known is record
    assert again.calibration_constant == first.calibration_constant
    assert record.validation_error is not None


def test_calibrated_table_is_cached(small_grid):
    table = calibrated_table(small_grid)
    assert calibrated_table(small_grid) is table
    assert get_calibration_tracker().lookup(small_grid, 3) is not None


def test_tracker_key_includes_width(small_grid):
    tracker = CalibrationTracker()
    record = CalibrationRecord(ell=1.0, constant=0.01, reference=0.009, validation_error=1e-4)
    tracker.record(small_grid, 3, record, width=2.0)
    assert tracker.lookup(small_grid, 3, width=2.0) == record
    assert tracker.lookup(small_grid, 3) is None


def test_global_tracker_uses_configured_db(tmp_path, monkeypatch):
    db = tmp_path / "fits" / "calibration.db"
    monkeypatch.setattr(calibration, "_calibration_tracker", None)
    monkeypatch.setattr(calibration, "CALIBRATION_DB", str(db))
    tracker = get_calibration_tracker()
    assert tracker.db_path == str(db)
    assert db.exists()
    assert get_calibration_tracker() is tracker


def test_global_tracker_in_memory_by_default(monkeypatch):
    monkeypatch.setattr(calibration, "_calibration_tracker", None)
    monkeypatch.setattr(calibration, "CALIBRATION_DB", "")
    assert get_calibration_tracker().db_path is None
