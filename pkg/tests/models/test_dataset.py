"""
Unit tests for dataset models.
"""

import numpy as np
import pytest

from epicscore.models.dataset import Dataset, SplitIndices


@pytest.mark.unit
class TestDataset:
    """Test Dataset model."""

    def test_vector_features_become_column(self):
        """Test 1-D features are reshaped and named."""
        data = Dataset(features=[1.0, 2.0, 3.0], target=[0.1, 0.2, 0.3])
        assert data.features.shape == (3, 1)
        assert data.column_names == ["x"]
        assert data.n_samples == 3 and data.n_features == 1
        assert len(data) == 3

    def test_default_column_names(self):
        """Test multi-column names."""
        data = Dataset(features=np.zeros((2, 3)), target=[0.0, 1.0])
        assert data.column_names == ["x0", "x1", "x2"]

    def test_classification_infers_classes(self):
        """Test label datasets infer K."""
        data = Dataset(features=np.zeros((4, 1)), target=[0, 2, 1, 2], is_classification=True)
        assert data.n_classes == 3
        assert data.target.dtype == np.int64

    def test_rejects_fractional_labels(self):
        """Test labels must be integers."""
        with pytest.raises(ValueError, match="integers"):
            Dataset(features=np.zeros((2, 1)), target=[0.5, 1.0], is_classification=True)

    def test_rejects_too_few_classes(self):
        """Test declared K must cover the labels."""
        with pytest.raises(ValueError, match="n_classes"):
            Dataset(features=np.zeros((2, 1)), target=[0, 3], is_classification=True, n_classes=2)

    def test_rejects_non_finite(self):
        """Test NaN features and infinite targets."""
        with pytest.raises(ValueError, match="Features"):
            Dataset(features=[[np.nan]], target=[1.0])
        with pytest.raises(ValueError, match="Target"):
            Dataset(features=[[1.0]], target=[np.inf])

    def test_rejects_shape_mismatch(self):
        """Test target length must match."""
        with pytest.raises(ValueError, match="shape"):
            Dataset(features=np.zeros((3, 1)), target=[1.0, 2.0])

    def test_subset_keeps_hooks(self, bimodal_data):
        """Test oracle hooks survive subsetting."""
        sub = bimodal_data.subset(np.arange(10))
        assert sub.n_samples == 10
        assert sub.mean_fn is bimodal_data.mean_fn
        np.testing.assert_array_equal(sub.target, bimodal_data.target[:10])


@pytest.mark.unit
class TestSplitIndices:
    """Test SplitIndices model."""

    def test_sizes_and_calibration(self):
        """Test calibration is cal1 followed by cal2."""
        split = SplitIndices(train=[0, 1], cal1=[2], cal2=[3, 4], test=[5], seed=0)
        assert split.sizes == (2, 1, 2, 1)
        np.testing.assert_array_equal(split.calibration, [2, 3, 4])

    def test_rejects_overlap(self):
        """Test index sets must be disjoint."""
        with pytest.raises(ValueError, match="disjoint"):
            SplitIndices(train=[0, 1], cal1=[1], cal2=[], test=[2], seed=0)

    def test_with_calibration_split(self):
        """Test re-partitioning calibration indices."""
        split = SplitIndices(train=[0], cal1=[1, 2, 3], cal2=[], test=[4], seed=0)
        new = split.with_calibration_split([3, 1], [2])
        assert new.sizes == (1, 2, 1, 1)
        with pytest.raises(ValueError, match="same indices"):
            split.with_calibration_split([1], [2])
