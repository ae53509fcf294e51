"""
Unit tests for the baseline conformal methods.
"""

import math

import numpy as np
import pytest

from epicscore.exceptions import BinTooSmallError, LengthMismatchError
from epicscore.models.calibration import CalibrationResult, NominalLevel
from epicscore.services.baselines import (
    MondrianBins,
    cqr_interval,
    cqr_r_interval,
    default_min_count,
    mondrian_calibrate,
    mondrian_interval,
    reg_split_interval,
    score_sets,
    weighted_interval,
)
from epicscore.services.conformal import conformal_quantile
from epicscore.services.scores import ExternalPredictor, KnnPredictor


@pytest.mark.unit
class TestRegressionSplit:
    """Test regression-split and locally weighted bands."""

    def test_constant_band(self):
        """Test g(x) = 1, t = 2."""
        assert reg_split_interval([1.0], 2.0)[0] == (-1.0, 3.0)

    def test_threshold_from_residuals(self):
        """Test residuals {1..9} at alpha 0.1 give t = 9."""
        t = conformal_quantile(np.arange(1.0, 10.0), 0.1)
        band = reg_split_interval([0.0, 2.0], t)
        assert band[1] == (-7.0, 11.0)

    def test_accepts_calibration_result_and_predictor(self):
        """Test thresholds as CalibrationResult and g as a fitted model."""
        g = ExternalPredictor([[0.0], [1.0]], [5.0, 6.0])
        result = CalibrationResult(0.5, 20, "residual", NominalLevel(0.1))
        band = reg_split_interval(g, result, X=[[1.0]])
        assert band[0] == (5.5, 6.5)

    def test_infinite_threshold(self):
        """Test the +inf sentinel gives degenerate bands."""
        band = reg_split_interval([0.0, 1.0], math.inf)
        assert band.n_degenerate == 2

    def test_weighted_half_width(self):
        """Test mad(x) = 2, t = 1.5 gives half-width 3."""
        assert weighted_interval([0.0], [2.0], 1.5)[0] == (-3.0, 3.0)

    def test_weighted_constant_mad_reduces(self):
        """Test a constant spread c matches regression-split with t c."""
        g = np.array([0.0, 1.0, -2.0])
        weighted = weighted_interval(g, np.full(3, 0.5), 4.0)
        plain = reg_split_interval(g, 2.0)
        np.testing.assert_allclose(weighted.lo, plain.lo)
        np.testing.assert_allclose(weighted.hi, plain.hi)

    def test_weighted_floor(self):
        """Test mad(x) = 0 uses the floor."""
        band = weighted_interval([0.0], [0.0], 2.0)
        assert band.widths[0] == pytest.approx(4e-6)

    def test_weighted_length_mismatch(self):
        """Test predictions and spreads must align."""
        with pytest.raises(LengthMismatchError):
            weighted_interval([0.0, 1.0], [1.0], 1.0)


@pytest.mark.unit
class TestMondrian:
    """Test Mondrian binning."""

    @pytest.fixture
    def two_groups(self):
        """Difficulty 0..8 with residuals 1..9 and 10..18 with 10..90."""
        difficulty = np.concatenate([np.arange(9.0), np.arange(10.0, 19.0)])
        scores = np.concatenate([np.arange(1.0, 10.0), np.arange(10.0, 91.0, 10.0)])
        return difficulty, scores

    def test_per_bin_thresholds(self, two_groups):
        """Test two bins give thresholds 9 and 90."""
        difficulty, scores = two_groups
        bins = mondrian_calibrate(difficulty, None, scores, 0.1, n_bins=2)
        assert bins.n_bins == 2
        np.testing.assert_array_equal(bins.thresholds, [9.0, 90.0])
        band = mondrian_interval([0.0, 0.0], bins, difficulty=[3.0, 15.0])
        assert band[0] == (-9.0, 9.0) and band[1] == (-90.0, 90.0)

    def test_single_bin_is_regression_split(self, two_groups):
        """Test n_bins = 1 reduces to regression-split."""
        difficulty, scores = two_groups
        bins = mondrian_calibrate(difficulty, None, scores, 0.1, n_bins=1)
        band = mondrian_interval([1.0, 2.0], bins, difficulty=[0.0, 17.0])
        plain = reg_split_interval([1.0, 2.0], conformal_quantile(scores, 0.1))
        np.testing.assert_array_equal(band.lo, plain.lo)
        np.testing.assert_array_equal(band.hi, plain.hi)

    def test_small_bins_are_merged(self, two_groups):
        """Test bins below the minimum count are merged with a neighbor."""
        difficulty, scores = two_groups
        bins = mondrian_calibrate(difficulty, None, scores, 0.1, n_bins=4)
        assert bins.n_bins <= 2
        assert np.all(bins.counts >= default_min_count(0.1))
        assert bins.counts.sum() == 18

    def test_too_few_points(self):
        """Test fewer points than one bin needs."""
        with pytest.raises(BinTooSmallError):
            mondrian_calibrate(np.arange(5.0), None, np.arange(5.0), 0.1)

    def test_default_min_count(self):
        """Test ceil((1 - alpha) / alpha)."""
        assert default_min_count(0.1) == 9
        assert default_min_count(0.2) == 4
        assert default_min_count(0.5) == 1

    def test_statistic_predictor(self, linear_data):
        """Test a fitted difficulty predictor is stored and reused at test time."""
        X, y = linear_data.features, linear_data.target
        g = KnnPredictor(10).fit(X[:200], y[:200])
        stat = KnnPredictor(10).fit(X[:200], np.abs(y[:200] - g.predict(X[:200])))
        scores = np.abs(y[200:] - g.predict(X[200:]))
        bins = mondrian_calibrate(stat, X[200:], scores, 0.1, n_bins=3)
        assert bins.statistic is stat
        band = mondrian_interval(g, bins, X=X[:5])
        assert len(band) == 5

    def test_missing_statistic(self, two_groups):
        """Test bins from raw values need difficulty at test time."""
        difficulty, scores = two_groups
        bins = mondrian_calibrate(difficulty, None, scores, 0.1, n_bins=2)
        with pytest.raises(ValueError, match="difficulty"):
            mondrian_interval([0.0], bins, X=[[0.0]])

    def test_bins_validate_layout(self):
        """Test edges and thresholds must agree."""
        with pytest.raises(ValueError, match="thresholds"):
            MondrianBins(np.array([1.0]), np.array([1.0]), np.array([5]), 5, NominalLevel(0.1))
        with pytest.raises(ValueError, match="increasing"):
            MondrianBins(np.array([2.0, 1.0]), np.ones(3), np.ones(3), 1, NominalLevel(0.1))


@pytest.mark.unit
class TestCqr:
    """Test CQR and CQR-r bands."""

    def test_zero_threshold(self):
        """Test t = 0 returns the quantile band."""
        assert cqr_interval([0.0], [1.0], 0.0)[0] == (0.0, 1.0)

    def test_positive_threshold(self):
        """Test q_lo = 0, q_hi = 1, t = 0.5."""
        assert cqr_interval([0.0], [1.0], 0.5)[0] == (-0.5, 1.5)

    def test_negative_threshold_shrinks(self):
        """Test a negative threshold tightens the band."""
        assert cqr_interval([0.0], [1.0], -0.25)[0] == (0.25, 0.75)

    def test_infinite_threshold(self):
        """Test the +inf sentinel."""
        assert cqr_interval([0.0], [1.0], math.inf).n_degenerate == 1

    def test_cqr_r_unit_width_reduces(self):
        """Test w(x) = 1 matches CQR."""
        lo, hi = np.array([0.0, 2.0]), np.array([1.0, 3.0])
        np.testing.assert_allclose(cqr_r_interval(lo, hi, 0.3).lo, cqr_interval(lo, hi, 0.3).lo)
        np.testing.assert_allclose(cqr_r_interval(lo, hi, 0.3).hi, cqr_interval(lo, hi, 0.3).hi)

    def test_cqr_r_expansion(self):
        """Test w = 2, t_r = 0.25 expands by 0.5 per side."""
        assert cqr_r_interval([0.0], [2.0], 0.25)[0] == (-0.5, 2.5)

    def test_cqr_r_floor(self):
        """Test a zero-width quantile band stays finite."""
        band = cqr_r_interval([1.0], [1.0], 3.0)
        assert np.isfinite(band.lo[0]) and band.widths[0] == pytest.approx(6e-6)


@pytest.mark.unit
class TestScoreSets:
    """Test split-conformal label sets."""

    def test_threshold_membership(self):
        """Test labels with s(x, y) <= t."""
        sets = score_sets([[0.0, 0.5, 0.8], [0.6, 0.0, 0.9]], 0.5)
        assert sets[0].labels == frozenset({0, 1})
        assert sets[1].labels == frozenset({1})
        assert sets[0].scores[2] == 0.8
