"""
Unit tests for evaluation metrics.
"""

import numpy as np
import pytest

from epicscore.exceptions import DegenerateBandError, LengthMismatchError
from epicscore.models.region import PredictionBand, PredictionSet
from epicscore.services.metrics import (
    aisl,
    coverage_width_corr,
    evaluate,
    marginal_coverage,
    mean_interval_length,
    ssc,
)


def _band(lo, hi, degenerate=None):
    return PredictionBand(lo=lo, hi=hi, degenerate=degenerate)


def _sets(sizes, covered):
    """Label sets {0..size-1}; the target is 0 when covered, else size."""
    sets = [PredictionSet(labels=frozenset(range(size))) for size in sizes]
    ys = [0 if hit else size for size, hit in zip(sizes, covered)]
    return sets, ys


@pytest.mark.unit
class TestAisl:
    """Test the average interval score."""

    @pytest.mark.parametrize("y,alpha,expected", [
        (0.5, 0.1, 1.0),
        (1.5, 0.1, 11.0),
        (-0.25, 0.5, 2.0),
    ])
    def test_hand_cases(self, y, alpha, expected):
        """Test band [0, 1] against hand-computed scores."""
        assert aisl(_band([0.0], [1.0]), [y], alpha) == pytest.approx(expected)

    def test_matches_brute_force(self, rng):
        """Test the vectorized score equals a per-point loop."""
        lo = rng.normal(size=1000)
        hi = lo + rng.exponential(size=1000)
        ys = rng.normal(size=1000)
        expected = np.mean([
            (h - l) + 20 * max(l - y, 0.0) + 20 * max(y - h, 0.0) for l, h, y in zip(lo, hi, ys)
        ])
        assert aisl(_band(lo, hi), ys, 0.1) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("y,expected", [
        (0.75, 0.0),
        (2.0, 25.0),
        (0.0, 15.0),
    ])
    def test_crossed_band_scored_from_midpoint(self, y, expected):
        """Test an empty band [1, 0.5] pays one miss measured from 0.75."""
        assert aisl(_band([1.0], [0.5]), [y], 0.1) == pytest.approx(expected)

    def test_rejects_degenerate(self):
        """Test full-space bands have no interval score."""
        with pytest.raises(DegenerateBandError):
            aisl(PredictionBand.full_space(2), [0.0, 1.0], 0.1)

    def test_length_mismatch(self):
        """Test band and target counts."""
        with pytest.raises(LengthMismatchError):
            aisl(_band([0.0], [1.0]), [0.0, 1.0], 0.1)


@pytest.mark.unit
class TestCoverageAndLength:
    """Test coverage and mean length."""

    def test_coverage_counts(self):
        """Test 9 of 10 covered."""
        band = _band(np.zeros(10), np.ones(10))
        ys = np.r_[np.full(9, 0.5), 2.0]
        assert marginal_coverage(band, ys) == pytest.approx(0.9)
        assert marginal_coverage(band, np.full(10, 0.5)) == 1.0
        assert marginal_coverage(band, np.full(10, -1.0)) == 0.0

    def test_set_coverage(self):
        """Test label-set membership."""
        sets, ys = _sets([1, 2, 1, 3], [True, True, False, True])
        assert marginal_coverage(sets, ys) == pytest.approx(0.75)

    def test_degenerate_band_counts_as_covered(self):
        """Test full-space bands contain every target."""
        band = _band([0.0, 0.0], [1.0, 1.0], degenerate=[False, True])
        assert marginal_coverage(band, [5.0, 5.0]) == 0.5

    def test_mean_length(self):
        """Test mean widths."""
        assert mean_interval_length(_band([0.0, 0.0], [1.0, 3.0])) == 2.0
        assert mean_interval_length(_band([1.0, 2.0], [1.0, 2.0])) == 0.0
        assert mean_interval_length(_band([-1.0], [1.0])) == 2.0

    def test_mean_length_skips_degenerate(self):
        """Test full-space bands are left out of the mean."""
        band = _band([0.0, 0.0], [2.0, 1.0], degenerate=[False, True])
        assert mean_interval_length(band) == 2.0
        with pytest.raises(DegenerateBandError):
            mean_interval_length(PredictionBand.full_space(3))


@pytest.mark.unit
class TestCoverageWidthCorrelation:
    """Test |rho| between coverage and width."""

    def test_constant_widths_undefined(self):
        """Test constant widths give None."""
        band = _band(np.zeros(4), np.ones(4))
        assert coverage_width_corr(band, [0.5, 2.0, 0.5, 2.0]) is None

    def test_constant_coverage_undefined(self):
        """Test all-covered bands give None."""
        band = _band(np.zeros(3), [1.0, 2.0, 3.0])
        assert coverage_width_corr(band, [0.5, 0.5, 0.5]) is None

    def test_perfect_dependence(self):
        """Test coverage determined by width."""
        band = _band(np.zeros(6), [1.0, 2.0, 1.0, 2.0, 1.0, 2.0])
        ys = [1.5, 1.5, 1.5, 1.5, 1.5, 1.5]
        assert coverage_width_corr(band, ys) == pytest.approx(1.0)

    def test_independent(self, rng):
        """Test independent coverage and widths are nearly uncorrelated."""
        widths = rng.uniform(1, 2, size=10_000)
        band = _band(np.zeros(10_000), widths)
        ys = np.where(rng.random(10_000) < 0.9, 0.5, 5.0)
        assert coverage_width_corr(band, ys) < 0.05


@pytest.mark.unit
class TestSsc:
    """Test size-stratified coverage."""

    def test_all_singletons_covered(self):
        """Test every set of size one covers."""
        sets, ys = _sets([1] * 5, [True] * 5)
        assert ssc(sets, ys) == 1.0

    def test_minimum_over_groups(self):
        """Test groups with coverage 0.9 and 0.5."""
        sizes = [1] * 10 + [2] * 10
        covered = [True] * 9 + [False] + [True] * 5 + [False] * 5
        sets, ys = _sets(sizes, covered)
        assert ssc(sets, ys) == pytest.approx(0.5)

    def test_single_group(self):
        """Test one group with coverage 0.8."""
        sets, ys = _sets([2] * 5, [True, True, True, True, False])
        assert ssc(sets, ys) == pytest.approx(0.8)

    def test_large_sizes_share_a_group(self):
        """Test sizes at or above n_bins are pooled."""
        sets, ys = _sets([3, 4, 5], [True, False, True])
        assert ssc(sets, ys, n_bins=3) == pytest.approx(2 / 3)
        with pytest.raises(ValueError):
            ssc(sets, ys, n_bins=0)


@pytest.mark.unit
class TestEvaluate:
    """Test the metric bundle."""

    def test_bands(self):
        """Test degenerate bands count for coverage only."""
        band = _band([0.0, 0.0, 0.0], [1.0, 2.0, 1.0], degenerate=[False, False, True])
        metrics = evaluate(band, [0.5, 3.0, 9.0], 0.1)
        assert metrics["amc"] == pytest.approx(2 / 3)
        assert metrics["n_degenerate"] == 1
        assert metrics["mean_il"] == pytest.approx(1.5)
        assert metrics["aisl"] == pytest.approx((1.0 + 2.0 + 20.0) / 2)
        assert metrics["ssc"] is None and metrics["n_test"] == 3

    def test_all_degenerate(self):
        """Test only coverage is defined when every band is full-space."""
        metrics = evaluate(PredictionBand.full_space(2), [0.0, 1.0], 0.1)
        assert metrics["amc"] == 1.0
        assert metrics["aisl"] is None and metrics["mean_il"] is None

    def test_sets(self):
        """Test set metrics."""
        sets, ys = _sets([1, 2, 3], [True, True, False])
        metrics = evaluate(sets, ys, 0.1)
        assert metrics["mean_set_size"] == 2.0
        assert metrics["ssc"] == 0.0
        assert metrics["aisl"] is None
