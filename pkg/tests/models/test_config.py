"""
Unit tests for configuration models.

Tests Pydantic validation of experiment settings.
"""

import pytest
from pydantic import ValidationError

from epicscore.models.config import (
    CLASSIFICATION_METHODS,
    METHOD_NAMES,
    REGRESSION_METHODS,
    BartConfig,
    CalibrationSplitRule,
    DatasetSpec,
    ExperimentConfig,
    PredictorConfig,
    PredictorKind,
)


@pytest.mark.unit
class TestPredictorConfig:
    """Test PredictorConfig model."""

    def test_default_values(self):
        """Test default k-NN mean predictor."""
        config = PredictorConfig()
        assert config.kind == PredictorKind.KNN_MEAN
        assert config.n_neighbors == 10
        assert config.quantile is None

    def test_quantile_kinds_get_median(self):
        """Test quantile predictors default to the median."""
        assert PredictorConfig(kind="knn_quantile").quantile == 0.5

    def test_rejects_empty_layers(self):
        """Test hidden layers must be positive widths."""
        with pytest.raises(ValidationError):
            PredictorConfig(hidden_layers=[])
        with pytest.raises(ValidationError):
            PredictorConfig(hidden_layers=[8, 0])


@pytest.mark.unit
class TestDatasetSpec:
    """Test DatasetSpec model."""

    def test_defaults(self):
        """Test the default bimodal regression dataset."""
        spec = DatasetSpec()
        assert spec.kind == "bimodal"
        assert spec.n == 5000
        assert not spec.is_classification
        assert spec.label == "bimodal"

    def test_csv_needs_path_and_target(self):
        """Test CSV datasets require both fields."""
        with pytest.raises(ValidationError, match="path"):
            DatasetSpec(kind="csv", path="data.csv")

    def test_csv_label(self):
        """Test CSV datasets are labelled by file stem."""
        spec = DatasetSpec(kind="csv", path="data/concrete.csv", target_column="y", label_mode=True)
        assert spec.label == "concrete"
        assert spec.is_classification

    def test_rejects_unknown_kind_and_convention(self):
        """Test enumerated string fields."""
        with pytest.raises(ValidationError):
            DatasetSpec(kind="images")
        with pytest.raises(ValidationError):
            DatasetSpec(variance_convention="precision")


@pytest.mark.unit
class TestExperimentConfig:
    """Test ExperimentConfig model."""

    def test_default_values(self):
        """Test protocol defaults."""
        config = ExperimentConfig()
        assert config.alpha == 0.1
        assert config.n_runs == 50
        assert config.split_ratios == (0.4, 0.4, 0.2)
        assert config.calibration_split == CalibrationSplitRule()
        assert config.calibration_split.cal2_fraction == 0.3
        assert config.calibration_split.cap == 1000

    def test_method_registry(self):
        """Test methods are split by task."""
        assert set(REGRESSION_METHODS).isdisjoint(CLASSIFICATION_METHODS)
        assert len(METHOD_NAMES) == len(REGRESSION_METHODS) + len(CLASSIFICATION_METHODS)

    def test_rejects_unknown_method(self):
        """Test unknown method names fail before any computation."""
        with pytest.raises(ValidationError, match="Unknown method"):
            ExperimentConfig(methods=["reg_split", "conformal_magic"])

    def test_rejects_duplicate_methods(self):
        """Test methods are unique."""
        with pytest.raises(ValidationError, match="Duplicate"):
            ExperimentConfig(methods=["reg_split", "reg_split"])

    def test_rejects_methods_for_wrong_task(self):
        """Test classification methods on regression data."""
        with pytest.raises(ValidationError, match="do not apply"):
            ExperimentConfig(methods=["aps"])
        config = ExperimentConfig(dataset={"kind": "blobs"}, methods=["aps"])
        assert config.dataset.is_classification

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
    def test_rejects_invalid_alpha(self, alpha):
        """Test alpha range."""
        with pytest.raises(ValidationError):
            ExperimentConfig(alpha=alpha)

    def test_rejects_zero_runs(self):
        """Test n_runs >= 1."""
        with pytest.raises(ValidationError):
            ExperimentConfig(n_runs=0)

    def test_rejects_bad_ratios(self):
        """Test split ratios must sum to one."""
        with pytest.raises(ValidationError, match="sum to 1"):
            ExperimentConfig(split_ratios=(0.5, 0.5, 0.5))

    def test_rejects_unknown_fields(self):
        """Test extra keys are refused."""
        with pytest.raises(ValidationError):
            ExperimentConfig(n_run=3)

    def test_run_seeds(self):
        """Test pre-assigned seeds."""
        assert ExperimentConfig(n_runs=3, seed=10).run_seeds() == [10, 11, 12]
        assert ExperimentConfig(n_runs=2, seeds=[5, 1]).run_seeds() == [5, 1]
        with pytest.raises(ValidationError, match="seeds"):
            ExperimentConfig(n_runs=2, seeds=[1])

    def test_quantile_levels(self):
        """Test CQR levels default to alpha/2 and 1 - alpha/2."""
        assert ExperimentConfig(alpha=0.2).quantile_levels() == pytest.approx((0.1, 0.9))
        assert ExperimentConfig(cqr_alphas=(0.05, 0.9)).quantile_levels() == (0.05, 0.9)
        with pytest.raises(ValidationError, match="cqr_alphas"):
            ExperimentConfig(cqr_alphas=(0.9, 0.1))

    def test_validate_assignment(self):
        """Test assignment is validated."""
        config = ExperimentConfig()
        with pytest.raises(ValidationError):
            config.alpha = 2.0


@pytest.mark.unit
class TestBartConfig:
    """Test BART sampler settings."""

    def test_proposals_must_sum_to_one(self):
        """Test grow / prune / change probabilities."""
        with pytest.raises(ValidationError, match="sum to 1"):
            BartConfig(p_grow=0.5, p_prune=0.5, p_change=0.5)

    def test_grow_and_prune_required(self):
        """Test the sampler can both grow and prune."""
        with pytest.raises(ValidationError, match="positive"):
            BartConfig(p_grow=0.0, p_prune=0.5, p_change=0.5)
