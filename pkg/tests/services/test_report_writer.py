"""
Unit tests for report output.
"""

import json
import math

import numpy as np
import pandas as pd
import pytest

from epicscore.exceptions import ParseError
from epicscore.models.region import PredictionBand
from epicscore.services.experiment_runner import aggregate
from epicscore.services.report_writer import (
    canonical_json,
    emit,
    load_reports,
    write_band_dump,
)


@pytest.fixture
def reports(make_report):
    """Mixed successful and failed run reports with awkward floats."""
    items = [
        make_report("reg_split", 0, amc=0.9125, aisl=2.718281828459045, mean_il=1 / 3),
        make_report("reg_split", 1, amc=0.8875, pearson_rho=None, coverage_in_bounds=True),
        make_report("epic_knn", 0, n_cal2=48, coverage_in_bounds=False),
        make_report("epic_knn", 1),
    ]
    items[-1].mark_failed("SingularKernelError: kernel not positive definite")
    return items


def _same_to_12_digits(a, b):
    if isinstance(a, float) and isinstance(b, float):
        return math.isclose(a, b, rel_tol=1e-12)
    return a == b


@pytest.mark.unit
class TestEmit:
    """Test emit and load_reports."""

    def test_json_csv_json_round_trip(self, tmp_path, reports):
        """Test every cell survives JSON -> CSV -> JSON."""
        from_json = load_reports(emit(reports, "json", tmp_path / "runs.json"))
        from_csv = load_reports(emit(from_json, "csv", tmp_path / "runs.csv"))
        for original, loaded in zip(reports, from_csv):
            a, b = original.to_dict(), loaded.to_dict()
            assert a.keys() == b.keys()
            for key in a:
                assert _same_to_12_digits(a[key], b[key]), key
        assert len(from_csv) == len(reports)

    def test_canonical_json_is_stable(self, tmp_path, reports):
        """Test equal inputs give byte-identical files."""
        first = emit(reports, "json", tmp_path / "a.json").read_bytes()
        second = emit(list(reports), "json", tmp_path / "b.json").read_bytes()
        assert first == second
        assert canonical_json({"b": 1, "a": 2}) == '{\n  "a": 2,\n  "b": 1\n}\n'

    def test_json_document(self, tmp_path, reports):
        """Test the run report document layout."""
        data = json.loads(emit(reports, "json", tmp_path / "runs.json").read_text(encoding="utf-8"))
        assert data["config_hash"] == "abc123"
        assert len(data["reports"]) == 4
        assert data["reports"][3]["status"] == "failed"

    def test_aggregate_formats(self, tmp_path, reports):
        """Test aggregate tables in both formats."""
        table = aggregate(reports)
        data = json.loads(emit(table, "json", tmp_path / "agg.json").read_text(encoding="utf-8"))
        assert [row["method"] for row in data["rows"]] == ["reg_split", "epic_knn"]
        frame = pd.read_csv(emit(table, "csv", tmp_path / "agg.csv"))
        assert list(frame["method"]) == ["reg_split", "epic_knn"]
        assert {"amc_mean", "amc_2sd", "amc_bold"} <= set(frame.columns)
        assert frame.loc[1, "n_failed"] == 1

    def test_unknown_format(self, tmp_path, reports):
        """Test only json and csv are written."""
        with pytest.raises(ValueError, match="Unknown report format"):
            emit(reports, "xml", tmp_path / "runs.xml")

    def test_creates_parent_directories(self, tmp_path, reports):
        """Test nested output paths."""
        path = emit(reports, "csv", tmp_path / "out" / "nested" / "runs.csv")
        assert path.exists()


@pytest.mark.unit
class TestLoadReports:
    """Test reading report files back."""

    def test_missing_file(self, tmp_path):
        """Test nonexistent paths in both formats."""
        with pytest.raises(FileNotFoundError):
            load_reports(tmp_path / "none.json")
        with pytest.raises(FileNotFoundError):
            load_reports(tmp_path / "none.csv")

    def test_not_a_report(self, tmp_path):
        """Test a JSON file of the wrong shape."""
        path = tmp_path / "other.json"
        path.write_text('{"rows": []}', encoding="utf-8")
        with pytest.raises(ParseError):
            load_reports(path)

    def test_bad_csv_cell(self, tmp_path, reports):
        """Test a malformed cell is reported with its location."""
        path = emit(reports, "csv", tmp_path / "runs.csv")
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        frame.loc[1, "run_index"] = "one"
        frame.to_csv(path, index=False)
        with pytest.raises(ParseError) as excinfo:
            load_reports(path)
        assert excinfo.value.row == 2
        assert excinfo.value.column == "run_index"

    def test_missing_csv_columns(self, tmp_path):
        """Test a CSV without the report columns."""
        path = tmp_path / "runs.csv"
        path.write_text("method,amc\nreg_split,0.9\n", encoding="utf-8")
        with pytest.raises(ParseError, match="missing report columns"):
            load_reports(path)


@pytest.mark.unit
class TestBandDump:
    """Test write_band_dump."""

    def test_rows_and_columns(self, tmp_path):
        """Test one row per test point with coverage flags."""
        band = PredictionBand(lo=[0.0, 0.0, 0.0], hi=[1.0, 1.0, 1.0], degenerate=[False, False, True])
        path = write_band_dump(tmp_path / "bands.csv", np.array([[0.1], [0.2], [0.3]]), band, [0.5, 2.0, 9.0])
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["x0", "lo", "hi", "y", "covered"]
        assert len(frame) == 3
        assert list(frame["covered"]) == [1, 0, 1]
        assert np.isinf(frame.loc[2, "hi"])

    def test_column_names(self, tmp_path):
        """Test feature column names are kept."""
        band = PredictionBand(lo=[0.0], hi=[1.0])
        path = write_band_dump(tmp_path / "b.csv", np.array([[1.0, 2.0]]), band, [0.5], column_names=["a", "b"])
        assert list(pd.read_csv(path).columns[:2]) == ["a", "b"]

    def test_length_mismatch(self, tmp_path):
        """Test features, bands and targets must align."""
        band = PredictionBand(lo=[0.0, 0.0], hi=[1.0, 1.0])
        with pytest.raises(ValueError, match="equal lengths"):
            write_band_dump(tmp_path / "b.csv", np.zeros((3, 1)), band, [0.0, 0.0])
