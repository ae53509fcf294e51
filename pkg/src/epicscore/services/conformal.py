"""
Split-conformal engine.

Conformal quantile of calibration scores, threshold calibration, and the
finite-sample marginal coverage bounds.
"""

import math
from typing import Sequence, Union

import numpy as np
from scipy import stats

from epicscore.exceptions import EmptyCalibrationError, InvalidNError, NonFiniteScoreError
from epicscore.models.calibration import CalibrationResult, CoverageBounds, NominalLevel

# Guards ceil() against representation error in (n + 1)(1 - alpha)
_INDEX_EPS = 1e-9


def order_statistic_index(n: int, alpha: Union[NominalLevel, float]) -> int:
    """
    1-based order-statistic index k = ceil((n + 1)(1 - alpha)).
    
    Args:
        n: Number of calibration scores.
        alpha: Miscoverage level.
    
    Returns:
        k, at least 1 (may exceed n).
    """
    level = NominalLevel.of(alpha)
    k = math.ceil((n + 1) * level.confidence - _INDEX_EPS)
    return max(k, 1)


def conformal_quantile(scores: Sequence[float], alpha: Union[NominalLevel, float]) -> float:
    """
    Conformal (1 - alpha) quantile of calibration scores.
    
    Returns the k-th smallest score with k = ceil((n + 1)(1 - alpha)), or
    +inf when k > n. Ties are kept as they are.
    
    Args:
        scores: Calibration scores.
        alpha: Miscoverage level.
    
    Returns:
        Threshold in score units.
    
    Raises:
        EmptyCalibrationError: If scores is empty.
        NonFiniteScoreError: If any score is NaN or infinite.
    """
    values = np.asarray(scores, dtype=float).reshape(-1)
    if values.size == 0:
        raise EmptyCalibrationError("Cannot calibrate on an empty score set")
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise NonFiniteScoreError(f"Score at position {bad} is not finite: {values[bad]}")
    
    n = values.size
    k = order_statistic_index(n, alpha)
    if k > n:
        return math.inf
    return float(np.partition(values, k - 1)[k - 1])


def calibrate(
    score_values: Sequence[float],
    alpha: Union[NominalLevel, float],
    score_id: str = "score"
) -> CalibrationResult:
    """
    Calibrate a nonconformity threshold on held-out scores.
    
    Args:
        score_values: Scores from a calibration set disjoint from training.
        alpha: Miscoverage level.
        score_id: Identifier of the score function.
    
    Returns:
        CalibrationResult with threshold = conformal_quantile(score_values, alpha).
    """
    level = NominalLevel.of(alpha)
    values = np.asarray(score_values, dtype=float).reshape(-1)
    threshold = conformal_quantile(values, level)
    return CalibrationResult(
        threshold=threshold,
        n_cal=int(values.size),
        score_id=score_id,
        alpha=level,
    )


def coverage_bounds(n2: int, alpha: Union[NominalLevel, float]) -> CoverageBounds:
    """
    Marginal coverage bounds for a threshold calibrated on n2 points.
    
    Args:
        n2: Calibration size used for the threshold.
        alpha: Miscoverage level.
    
    Returns:
        CoverageBounds(lower=1 - alpha, upper=1 - alpha + 1/(1 + n2)).
    
    Raises:
        InvalidNError: If n2 < 1.
    """
    if int(n2) != n2 or n2 < 1:
        raise InvalidNError(f"n2 must be a positive integer: {n2}")
    level = NominalLevel.of(alpha)
    lower = level.confidence
    upper = lower + 1.0 / (1.0 + n2)
    return CoverageBounds(lower=lower, upper=upper, n2=int(n2), clamped=upper > 1.0)


def binomial_tolerance(n_test: int, p: float, confidence: float = 0.99) -> float:
    """
    Half-width of a central binomial interval for an empirical frequency.
    
    Args:
        n_test: Number of Bernoulli trials.
        p: Success probability.
        confidence: Interval probability mass.
    
    Returns:
        Largest deviation of k/n_test from p inside the interval.
    """
    if n_test < 1:
        raise InvalidNError(f"n_test must be >= 1: {n_test}")
    p = min(max(p, 0.0), 1.0)
    lo, hi = stats.binom.interval(confidence, n_test, p)
    return float(max(p - lo / n_test, hi / n_test - p))


def coverage_within_bounds(
    coverage: float,
    n_test: int,
    bounds: CoverageBounds,
    confidence: float = 0.99
) -> bool:
    """
    Check an empirical coverage against the bounds up to binomial noise.
    
    Args:
        coverage: Empirical coverage on n_test points.
        n_test: Test size.
        bounds: Theoretical marginal coverage bounds.
        confidence: Binomial interval mass for the tolerance.
    
    Returns:
        True if lower - eps <= coverage <= upper + eps.
    """
    eps_lo = binomial_tolerance(n_test, bounds.lower, confidence)
    eps_hi = binomial_tolerance(n_test, bounds.upper_clamped, confidence)
    return bounds.lower - eps_lo <= coverage <= bounds.upper_clamped + eps_hi
