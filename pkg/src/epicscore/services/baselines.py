"""
Baseline conformal methods.

Regression-split, locally weighted regression-split, Mondrian binning over a
difficulty statistic, CQR and width-scaled CQR (CQR-r).
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from epicscore.exceptions import BinTooSmallError, LengthMismatchError
from epicscore.models.calibration import CalibrationResult, NominalLevel
from epicscore.models.region import PredictionBand, PredictionSet
from epicscore.services.conformal import conformal_quantile
from epicscore.services.scores import SIGMA_FLOOR, Predictor
from epicscore.utils.logger import get_logger

logger = get_logger(__name__)

Threshold = Union[float, CalibrationResult]
ModelOrValues = Union[Predictor, np.ndarray]


def _threshold(value: Threshold) -> float:
    if isinstance(value, CalibrationResult):
        return float(value.threshold)
    return float(value)


def _evaluate(model: ModelOrValues, X) -> np.ndarray:
    """Predictions of a fitted predictor at X, or precomputed values as-is."""
    if hasattr(model, "predict"):
        return np.asarray(model.predict(X), dtype=float).reshape(-1)
    return np.atleast_1d(np.asarray(model, dtype=float)).reshape(-1)


def _symmetric_band(center: np.ndarray, half_width) -> PredictionBand:
    half_width = np.broadcast_to(np.asarray(half_width, dtype=float), center.shape)
    degenerate = np.isinf(half_width)
    return PredictionBand(
        lo=np.where(degenerate, -np.inf, center - np.where(degenerate, 0.0, half_width)),
        hi=np.where(degenerate, np.inf, center + np.where(degenerate, 0.0, half_width)),
        degenerate=degenerate,
    )


def reg_split_interval(g: ModelOrValues, threshold: Threshold, X=None) -> PredictionBand:
    """Constant-width band g(x) +/- t."""
    return _symmetric_band(_evaluate(g, X), _threshold(threshold))


def weighted_interval(
    g: ModelOrValues,
    mad: ModelOrValues,
    threshold: Threshold,
    X=None,
    floor: float = SIGMA_FLOOR
) -> PredictionBand:
    """Band g(x) +/- t * max(mad(x), floor)."""
    center = _evaluate(g, X)
    spread = np.maximum(_evaluate(mad, X), floor)
    if spread.shape != center.shape:
        raise LengthMismatchError(f"{center.size} predictions but {spread.size} spreads")
    t = _threshold(threshold)
    if math.isinf(t):
        return PredictionBand.full_space(center.size)
    return _symmetric_band(center, t * spread)


# ----------------------------------------------------------------------------
# Mondrian
# ----------------------------------------------------------------------------

def default_min_count(alpha: Union[NominalLevel, float]) -> int:
    """Smallest bin size with a finite conformal quantile: ceil((1 - alpha) / alpha)."""
    level = NominalLevel.of(alpha)
    return max(1, math.ceil(level.confidence / level.alpha - 1e-9))


@dataclass(frozen=True, eq=False)
class MondrianBins:
    """
    Equal-mass taxonomy over a difficulty statistic with per-bin thresholds.

    Attributes:
        edges: Interior bin edges, strictly increasing; a value v falls in
            bin searchsorted(edges, v, side='right').
        thresholds: Conformal threshold of each bin.
        counts: Calibration points per bin.
        min_count: Minimum calibration points per bin.
        statistic: Fitted difficulty predictor, when one was supplied.
    """

    edges: np.ndarray
    thresholds: np.ndarray
    counts: np.ndarray
    min_count: int
    alpha: NominalLevel
    statistic: Optional[Predictor] = None

    def __post_init__(self):
        """Validate bin layout."""
        if self.thresholds.size != self.edges.size + 1:
            raise ValueError(
                f"{self.edges.size} edges need {self.edges.size + 1} thresholds, "
                f"got {self.thresholds.size}"
            )
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("Bin edges must be strictly increasing")

    @property
    def n_bins(self) -> int:
        return int(self.thresholds.size)

    def assign(self, difficulty) -> np.ndarray:
        """Bin index of each difficulty value."""
        values = np.atleast_1d(np.asarray(difficulty, dtype=float)).reshape(-1)
        return np.searchsorted(self.edges, values, side="right")

    def __repr__(self) -> str:
        return f"MondrianBins(n_bins={self.n_bins}, counts={self.counts.tolist()})"


def _equal_mass_edges(values: np.ndarray, n_bins: int) -> np.ndarray:
    chunks = np.array_split(np.sort(values), n_bins)
    starts = [chunk[0] for chunk in chunks[1:] if chunk.size]
    return np.unique(np.asarray(starts, dtype=float))


def _merge_small_bins(edges: np.ndarray, values: np.ndarray, min_count: int) -> np.ndarray:
    edges = edges.copy()
    while edges.size:
        counts = np.bincount(np.searchsorted(edges, values, side="right"), minlength=edges.size + 1)
        small = np.flatnonzero(counts < min_count)
        if not small.size:
            break
        b = int(small[np.argmin(counts[small])])
        # Merge with the smaller neighbor
        if b == 0:
            drop = 0
        elif b == counts.size - 1:
            drop = b - 1
        else:
            drop = b - 1 if counts[b - 1] <= counts[b + 1] else b
        edges = np.delete(edges, drop)
    return edges


def mondrian_calibrate(
    difficulty_stat: ModelOrValues,
    cal_X,
    cal_scores,
    alpha: Union[NominalLevel, float],
    n_bins: int = 10,
    min_count: Optional[int] = None
) -> MondrianBins:
    """
    Calibrate per-bin thresholds of residual scores.

    Args:
        difficulty_stat: Difficulty predictor (or its values on the calibration set).
        cal_X: Calibration features (ignored when values are given).
        cal_scores: Residual scores of the calibration set.
        alpha: Miscoverage level.
        n_bins: Requested number of equal-mass bins.
        min_count: Minimum bin size; defaults to default_min_count(alpha).

    Returns:
        MondrianBins.

    Raises:
        BinTooSmallError: If the calibration set cannot fill a single bin.
    """
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1: {n_bins}")
    level = NominalLevel.of(alpha)
    min_count = default_min_count(level) if min_count is None else int(min_count)
    difficulty = _evaluate(difficulty_stat, cal_X)
    scores = np.asarray(cal_scores, dtype=float).reshape(-1)
    if difficulty.shape != scores.shape:
        raise LengthMismatchError(f"{difficulty.size} difficulty values but {scores.size} scores")
    if scores.size < min_count:
        raise BinTooSmallError(
            f"{scores.size} calibration points cannot fill one bin of {min_count}"
        )

    edges = _equal_mass_edges(difficulty, n_bins)
    merged = _merge_small_bins(edges, difficulty, min_count)
    if merged.size + 1 < n_bins:
        logger.warning(
            f"Mondrian: {n_bins} bins requested, {merged.size + 1} kept after merging "
            f"bins below {min_count} points"
        )

    assignment = np.searchsorted(merged, difficulty, side="right")
    counts = np.bincount(assignment, minlength=merged.size + 1)
    thresholds = np.array([
        conformal_quantile(scores[assignment == b], level) for b in range(merged.size + 1)
    ])
    return MondrianBins(
        edges=merged,
        thresholds=thresholds,
        counts=counts,
        min_count=min_count,
        alpha=level,
        statistic=difficulty_stat if hasattr(difficulty_stat, "predict") else None,
    )


def mondrian_interval(
    g: ModelOrValues,
    bins: MondrianBins,
    X=None,
    difficulty=None
) -> PredictionBand:
    """
    Band g(x) +/- t_b(x) with the threshold of the bin x's difficulty falls in.

    Args:
        g: Point predictor or its values.
        bins: Calibrated bins.
        X: Test features.
        difficulty: Difficulty values at X; computed from bins.statistic when omitted.
    """
    if difficulty is None:
        if bins.statistic is None:
            raise ValueError("Bins carry no difficulty predictor; pass difficulty values")
        difficulty = bins.statistic.predict(X)
    center = _evaluate(g, X)
    half_width = bins.thresholds[bins.assign(difficulty)]
    if half_width.shape != center.shape:
        raise LengthMismatchError(f"{center.size} predictions but {half_width.size} difficulty values")
    return _symmetric_band(center, half_width)


# ----------------------------------------------------------------------------
# CQR
# ----------------------------------------------------------------------------

def cqr_interval(
    q_lo: ModelOrValues,
    q_hi: ModelOrValues,
    threshold: Threshold,
    X=None
) -> PredictionBand:
    """Band [q_lo(x) - t, q_hi(x) + t]; a negative t shrinks it."""
    lo, hi = _evaluate(q_lo, X), _evaluate(q_hi, X)
    if lo.shape != hi.shape:
        raise LengthMismatchError(f"{lo.size} lower but {hi.size} upper quantiles")
    t = _threshold(threshold)
    if math.isinf(t):
        return PredictionBand.full_space(lo.size)
    return PredictionBand(lo=lo - t, hi=hi + t)


def cqr_r_interval(
    q_lo: ModelOrValues,
    q_hi: ModelOrValues,
    threshold_r: Threshold,
    X=None,
    floor: float = SIGMA_FLOOR
) -> PredictionBand:
    """Band [q_lo - t_r w(x), q_hi + t_r w(x)] with w = max(q_hi - q_lo, floor)."""
    lo, hi = _evaluate(q_lo, X), _evaluate(q_hi, X)
    if lo.shape != hi.shape:
        raise LengthMismatchError(f"{lo.size} lower but {hi.size} upper quantiles")
    t = _threshold(threshold_r)
    if math.isinf(t):
        return PredictionBand.full_space(lo.size)
    expansion = t * np.maximum(hi - lo, floor)
    return PredictionBand(lo=lo - expansion, hi=hi + expansion)


# ----------------------------------------------------------------------------
# Classification
# ----------------------------------------------------------------------------

def score_sets(label_scores, threshold: Threshold) -> List[PredictionSet]:
    """
    Split-conformal label sets {y : s(x, y) <= t} from a score matrix.

    Args:
        label_scores: Scores of every label, shape (m, K).
        threshold: Calibrated threshold.
    """
    scores = np.atleast_2d(np.asarray(label_scores, dtype=float))
    t = _threshold(threshold)
    return [
        PredictionSet(
            labels=frozenset(int(y) for y in np.flatnonzero(row <= t)),
            scores={label: float(value) for label, value in enumerate(row)},
        )
        for row in scores
    ]
