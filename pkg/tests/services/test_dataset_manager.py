"""
Unit tests for dataset loading and the splitting protocol.
"""

import numpy as np
import pytest

from epicscore.exceptions import (
    InvalidNError,
    MissingColumnError,
    ParseError,
    RowCountMismatchError,
)
from epicscore.models.config import CalibrationSplitRule, DatasetSpec
from epicscore.services.dataset_manager import (
    DatasetManager,
    calibration_reserve,
    load_csv,
    load_predictions,
    split_calibration,
    split_dataset,
    write_dataset_csv,
)


@pytest.fixture
def csv_file(tmp_path):
    """Three-row regression file."""
    path = tmp_path / "small.csv"
    path.write_text("x1,x2,y\n0.1,1,2.5\n0.2,2,3.5\n0.3,3,4.5\n", encoding="utf-8")
    return path


@pytest.mark.unit
class TestSplitting:
    """Test the train / calibration / test protocol."""

    def test_rounding(self):
        """Test n = 10 with (0.4, 0.4, 0.2)."""
        assert split_dataset(10, seed=0).sizes == (4, 4, 0, 2)

    def test_all_train(self):
        """Test ratios (1, 0, 0)."""
        split = split_dataset(7, ratios=(1.0, 0.0, 0.0), seed=0)
        assert split.sizes == (7, 0, 0, 0)

    def test_deterministic(self):
        """Test equal seeds give equal indices."""
        a, b = split_dataset(100, seed=3), split_dataset(100, seed=3)
        np.testing.assert_array_equal(a.train, b.train)
        np.testing.assert_array_equal(a.test, b.test)

    def test_partition(self):
        """Test the parts cover every row once."""
        split = split_dataset(101, seed=1, rule=CalibrationSplitRule())
        everything = np.concatenate([split.train, split.cal1, split.cal2, split.test])
        np.testing.assert_array_equal(np.sort(everything), np.arange(101))

    def test_invalid(self):
        """Test bad sizes and ratios."""
        with pytest.raises(InvalidNError):
            split_dataset(0)
        with pytest.raises(ValueError, match="Ratios"):
            split_dataset(10, ratios=(0.5, 0.6, 0.1))

    @pytest.mark.parametrize("m,expected", [(1000, (700, 300)), (10_000, (9000, 1000)), (10, (7, 3))])
    def test_calibration_split(self, m, expected):
        """Test the 70 / 30 rule with its cap."""
        cal1, cal2 = split_calibration(np.arange(m), seed=0)
        assert (cal1.size, cal2.size) == expected
        assert not np.intersect1d(cal1, cal2).size

    def test_reserve_threshold(self):
        """Test the cap applies only above the threshold."""
        assert calibration_reserve(3000) == 900
        assert calibration_reserve(3001) == 1000


@pytest.mark.unit
class TestCsvLoading:
    """Test CSV ingestion."""

    def test_well_formed(self, csv_file):
        """Test a three-row file."""
        data = load_csv(csv_file, "y")
        assert data.n_samples == 3
        assert data.column_names == ["x1", "x2"]
        np.testing.assert_allclose(data.target, [2.5, 3.5, 4.5])

    def test_missing_target(self, csv_file):
        """Test an absent target column."""
        with pytest.raises(MissingColumnError):
            load_csv(csv_file, "target")

    def test_na_cell(self, tmp_path):
        """Test an 'NA' cell is reported with its row and column."""
        path = tmp_path / "bad.csv"
        path.write_text("x,y\n1,2\nNA,3\n", encoding="utf-8")
        with pytest.raises(ParseError) as excinfo:
            load_csv(path, "y")
        assert excinfo.value.row == 2
        assert excinfo.value.column == "x"
        assert "'NA'" in str(excinfo.value)

    def test_label_mode(self, tmp_path):
        """Test integer labels and fractional-label rejection."""
        path = tmp_path / "labels.csv"
        path.write_text("x,label\n0.1,0\n0.2,2\n", encoding="utf-8")
        data = load_csv(path, "label", label_mode=True)
        assert data.is_classification and data.n_classes == 3
        path.write_text("x,label\n0.1,0.5\n", encoding="utf-8")
        with pytest.raises(ParseError, match="integer"):
            load_csv(path, "label", label_mode=True)

    def test_missing_file(self, tmp_path):
        """Test a nonexistent path."""
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "none.csv", "y")

    def test_write_round_trip(self, tmp_path, bimodal_data):
        """Test written datasets load back exactly."""
        path = write_dataset_csv(bimodal_data, tmp_path / "out" / "bimodal.csv")
        loaded = load_csv(path, bimodal_data.target_name)
        np.testing.assert_array_equal(loaded.features, bimodal_data.features)
        np.testing.assert_array_equal(loaded.target, bimodal_data.target)

    def test_seventeen_digit_values(self, tmp_path):
        """Test full-precision cells parse to the nearest double."""
        path = tmp_path / "exact.csv"
        path.write_text(
            f"x,y\n{0.1 + 0.2!r},{1 / 3:.17g}\n-2.2250738585072014e-308,0.30000000000000004\n",
            encoding="utf-8",
        )
        data = load_csv(path, "y")
        assert data.features[0, 0] == 0.1 + 0.2
        assert data.features[1, 0] == -2.2250738585072014e-308
        assert data.target[0] == 1 / 3
        assert data.target[1] == 0.30000000000000004


@pytest.mark.unit
class TestPredictions:
    """Test external prediction files."""

    def test_columns(self, tmp_path):
        """Test present columns are loaded."""
        path = tmp_path / "pred.csv"
        path.write_text("g,q_lo\n1,0\n2,1\n", encoding="utf-8")
        predictions = load_predictions(path, n_rows=2)
        assert predictions.columns == ("g", "q_lo")
        assert len(predictions) == 2

    def test_errors(self, tmp_path):
        """Test missing columns and row mismatch."""
        path = tmp_path / "pred.csv"
        path.write_text("other\n1\n", encoding="utf-8")
        with pytest.raises(MissingColumnError):
            load_predictions(path)
        path.write_text("g\n1\n2\n", encoding="utf-8")
        with pytest.raises(RowCountMismatchError):
            load_predictions(path, n_rows=3)


@pytest.mark.unit
class TestDatasetManager:
    """Test DatasetManager."""

    def test_synthetic_per_seed(self):
        """Test synthetic data is regenerated per seed."""
        manager = DatasetManager(DatasetSpec(kind="bimodal", n=100))
        assert manager.dataset(0).n_samples == 100
        assert not np.array_equal(manager.dataset(0).target, manager.dataset(1).target)
        assert manager.predictions() is None

    def test_csv_relative_to_base_dir(self, csv_file):
        """Test relative paths resolve against the base directory and load once."""
        (csv_file.parent / "pred.csv").write_text("g\n1\n2\n3\n", encoding="utf-8")
        spec = DatasetSpec(kind="csv", path="small.csv", target_column="y", predictions_path="pred.csv")
        manager = DatasetManager(spec, base_dir=csv_file.parent)
        assert manager.dataset(0) is manager.dataset(5)
        np.testing.assert_allclose(manager.predictions().g, [1.0, 2.0, 3.0])
