"""
Evaluation metrics for prediction bands and label sets.

Average marginal coverage, interval score (AISL), mean interval length,
coverage/width correlation and size-stratified coverage.
"""

from typing import Dict, Optional, Sequence, Union

import numpy as np

from epicscore.exceptions import DegenerateBandError, LengthMismatchError
from epicscore.models.calibration import NominalLevel
from epicscore.models.region import PredictionBand, PredictionSet

DEFAULT_SSC_BINS = 15
# Relative spread below which widths count as constant
_CONSTANT_RTOL = 1e-9

Regions = Union[PredictionBand, Sequence[PredictionSet]]


def _targets(ys, n: int) -> np.ndarray:
    ys = np.atleast_1d(np.asarray(ys, dtype=float)).reshape(-1)
    if ys.size != n:
        raise LengthMismatchError(f"{n} regions but {ys.size} targets")
    return ys


def aisl(bands: PredictionBand, ys, alpha: Union[NominalLevel, float]) -> float:
    """
    Average interval score loss.

    Mean of (hi - lo) + (2/alpha)(lo - y)1{y < lo} + (2/alpha)(y - hi)1{y > hi}.
    An empty (crossed) band counts as width 0 with the miss measured from
    its midpoint.

    Raises:
        DegenerateBandError: If any band is full-space.
        LengthMismatchError: If bands and ys differ in length.
    """
    level = NominalLevel.of(alpha)
    ys = _targets(ys, len(bands))
    if bands.n_degenerate:
        raise DegenerateBandError(f"{bands.n_degenerate} full-space bands have no interval score")
    if not len(bands):
        raise ValueError("No bands to score")
    penalty = 2.0 / level.alpha
    # Empty bands are scored as the single point at their midpoint
    lo, hi = bands.scoring_ends()
    below = np.where(ys < lo, lo - ys, 0.0)
    above = np.where(ys > hi, ys - hi, 0.0)
    return float(np.mean(bands.widths + penalty * below + penalty * above))


def marginal_coverage(regions: Regions, ys) -> float:
    """Fraction of points whose target lies in its band or label set."""
    if isinstance(regions, PredictionBand):
        covered = regions.contains(_targets(ys, len(regions)))
    else:
        labels = np.asarray(ys).reshape(-1)
        if labels.size != len(regions):
            raise LengthMismatchError(f"{len(regions)} sets but {labels.size} labels")
        covered = np.array([s.contains(y) for s, y in zip(regions, labels)], dtype=bool)
    if not covered.size:
        raise ValueError("No regions to evaluate")
    return float(np.mean(covered))


def mean_interval_length(bands: PredictionBand) -> float:
    """Mean width over bands that are not full-space."""
    finite = ~bands.degenerate
    if not np.any(finite):
        raise DegenerateBandError("Every band is full-space")
    return float(np.mean(bands.widths[finite]))


def coverage_width_corr(bands: PredictionBand, ys) -> Optional[float]:
    """
    |Pearson correlation| between coverage indicators and widths.

    Full-space bands are left out. Returns None when either vector is constant.
    """
    ys = _targets(ys, len(bands))
    finite = ~bands.degenerate
    covered = bands.contains(ys)[finite].astype(float)
    widths = bands.widths[finite]
    if covered.size < 2 or np.ptp(covered) == 0.0:
        return None
    if np.ptp(widths) <= _CONSTANT_RTOL * max(1.0, float(np.mean(np.abs(widths)))):
        return None
    c = covered - covered.mean()
    w = widths - widths.mean()
    rho = float(np.dot(c, w) / np.sqrt(np.dot(c, c) * np.dot(w, w)))
    return min(abs(rho), 1.0)


def ssc(sets: Sequence[PredictionSet], ys, n_bins: int = DEFAULT_SSC_BINS) -> Optional[float]:
    """
    Size-stratified coverage.

    Sets are grouped by cardinality (size j for j < n_bins, one group for
    sizes >= n_bins); the result is the lowest coverage over non-empty groups.
    """
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1: {n_bins}")
    labels = np.asarray(ys).reshape(-1)
    if labels.size != len(sets):
        raise LengthMismatchError(f"{len(sets)} sets but {labels.size} labels")
    if not len(sets):
        return None
    groups = np.minimum([s.size for s in sets], n_bins)
    covered = np.array([s.contains(y) for s, y in zip(sets, labels)], dtype=float)
    return float(min(covered[groups == g].mean() for g in np.unique(groups)))


def evaluate(
    regions: Regions,
    ys,
    alpha: Union[NominalLevel, float],
    ssc_bins: int = DEFAULT_SSC_BINS
) -> Dict[str, Optional[float]]:
    """
    All metrics for one method on one test set.

    Full-space bands count toward coverage but are excluded from the
    interval score, length and correlation; their number is reported.

    Returns:
        Dictionary with amc, aisl, mean_il, pearson_rho, ssc, mean_set_size,
        n_test and n_degenerate.
    """
    metrics: Dict[str, Optional[float]] = {
        "amc": marginal_coverage(regions, ys),
        "aisl": None,
        "mean_il": None,
        "pearson_rho": None,
        "ssc": None,
        "mean_set_size": None,
        "n_test": len(regions),
        "n_degenerate": 0,
    }
    if isinstance(regions, PredictionBand):
        ys = _targets(ys, len(regions))
        finite = ~regions.degenerate
        metrics["n_degenerate"] = regions.n_degenerate
        if np.any(finite):
            kept = regions.subset(finite)
            metrics["aisl"] = aisl(kept, ys[finite], alpha)
            metrics["mean_il"] = mean_interval_length(kept)
            metrics["pearson_rho"] = coverage_width_corr(kept, ys[finite])
    else:
        metrics["ssc"] = ssc(regions, ys, ssc_bins)
        metrics["mean_set_size"] = float(np.mean([s.size for s in regions]))
    return metrics
