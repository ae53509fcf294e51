"""
EPICSCORE pipeline.

Splits the calibration set, fits a predictive distribution of the base
score on the first part, calibrates the transformed score
s'(x, y) = F(s(x, y) | x, D) on the second part, and builds prediction
bands and label sets from the calibrated threshold.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np
from scipy.special import erfinv

from epicscore.exceptions import (
    AlphabetMismatchError,
    InvalidTError,
    LengthMismatchError,
    SplitTooSmallError,
)
from epicscore.models.calibration import CalibrationResult, CoverageBounds, NominalLevel
from epicscore.models.config import (
    CalibrationSplitRule,
    MdnConfig,
    PredictiveKind,
)
from epicscore.models.dataset import Dataset
from epicscore.models.region import PredictionBand, PredictionSet
from epicscore.services.conformal import calibrate, coverage_bounds
from epicscore.services.dataset_manager import split_calibration
from epicscore.services.mdn import DropoutClassifierModel
from epicscore.services.predictive import (
    KnnLabelModel,
    LabelPredictiveModel,
    PredictiveCdfModel,
    PredictiveModelConfig,
    fit_predictive,
    predictive_label_dist,
)
from epicscore.services.scores import ScoreFunction, ScoreKind, as_matrix, label_score_matrix
from epicscore.utils.logger import get_logger

logger = get_logger(__name__)

Predictive = Union[PredictiveCdfModel, LabelPredictiveModel]


@dataclass
class EpicPipeline:
    """
    A calibrated EPICSCORE pipeline.

    Attributes:
        score: Base nonconformity score.
        predictive: Score predictive F(s | x, D) or label predictive P(y | x, D),
            fitted on D_cal,1 only.
        calibration: Threshold on s' values of D_cal,2.
        cal1_indices: Rows of the calibration set used for the predictive.
        cal2_indices: Rows used for the threshold.
        seed: Seed of the calibration split and predictive fit.
    """

    score: ScoreFunction
    predictive: Predictive
    calibration: CalibrationResult
    cal1_indices: np.ndarray
    cal2_indices: np.ndarray
    seed: int = 0
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        """Check the two calibration parts are disjoint."""
        if np.intersect1d(self.cal1_indices, self.cal2_indices).size:
            raise ValueError("D_cal,1 and D_cal,2 must be disjoint")

    @property
    def n_cal1(self) -> int:
        return int(self.cal1_indices.size)

    @property
    def n_cal2(self) -> int:
        return int(self.cal2_indices.size)

    @property
    def threshold(self) -> float:
        return self.calibration.threshold

    @property
    def alpha(self) -> NominalLevel:
        return self.calibration.alpha

    @property
    def label_mode(self) -> bool:
        """True when s' sums label predictive probabilities."""
        return isinstance(self.predictive, LabelPredictiveModel)

    @property
    def bounds(self) -> CoverageBounds:
        """Marginal coverage bounds implied by |D_cal,2|."""
        return coverage_bounds(self.n_cal2, self.alpha)

    def __repr__(self) -> str:
        return (
            f"EpicPipeline(score={self.score.score_id}, "
            f"predictive={type(self.predictive).__name__}, t={self.threshold:.6g}, "
            f"n_cal1={self.n_cal1}, n_cal2={self.n_cal2})"
        )


# ----------------------------------------------------------------------------
# Transformed score
# ----------------------------------------------------------------------------

def epic_label_scores(predictive_probs: np.ndarray, base_scores: np.ndarray) -> np.ndarray:
    """
    s'(x, y) = sum of P(y' | x, D) over labels y' with s(x, y') <= s(x, y).

    Labels tied in base score share one value that includes the whole tie
    group. Sums are exactly rounded, so the result does not depend on label
    order.

    Args:
        predictive_probs: P(y | x, D), shape (m, K).
        base_scores: s(x, y) for every label, shape (m, K).

    Returns:
        s' for every label, shape (m, K).
    """
    probs = np.atleast_2d(np.asarray(predictive_probs, dtype=float))
    scores = np.atleast_2d(np.asarray(base_scores, dtype=float))
    if probs.shape != scores.shape:
        raise AlphabetMismatchError(
            f"Predictive over {probs.shape[-1]} labels but base scores over {scores.shape[-1]}"
        )
    out = np.empty_like(probs)
    for i in range(probs.shape[0]):
        row_p, row_s = probs[i], scores[i]
        for value in np.unique(row_s):
            out[i, row_s == value] = math.fsum(row_p[row_s <= value])
    return out


def epic_score(pipeline: EpicPipeline, X, y) -> np.ndarray:
    """
    s'(x_i, y_i) for each row.

    For score predictives this is F(s(x, y) | x, D); for label predictives
    it is the cumulative predictive probability of labels scoring no higher
    than y.
    """
    return _transformed_scores(pipeline.score, pipeline.predictive, X, y)


def _transformed_scores(score: ScoreFunction, predictive: Predictive, X, y) -> np.ndarray:
    X = as_matrix(X)
    y = np.asarray(y).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise LengthMismatchError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")

    if isinstance(predictive, LabelPredictiveModel):
        transformed = epic_label_scores(predictive_label_dist(predictive, X), score.label_scores(X))
        return transformed[np.arange(len(y)), y.astype(np.int64)]
    return predictive.cdf(X, score(X, y))


def _label_predictive(
    kind: PredictiveKind,
    n_classes: int,
    config: PredictiveModelConfig,
    seed: int
) -> LabelPredictiveModel:
    if kind == PredictiveKind.KNN_EMPIRICAL:
        n_neighbors = getattr(config, "n_neighbors", None)
        return KnnLabelModel(n_classes, n_neighbors=n_neighbors)
    if kind == PredictiveKind.MDN_DROPOUT:
        mdn_config = config if isinstance(config, MdnConfig) else None
        return DropoutClassifierModel(n_classes, mdn_config, seed=seed)
    raise ValueError(f"No label predictive for kind {kind.value}")


def epic_calibrate(
    base_score: ScoreFunction,
    predictive_kind: Union[PredictiveKind, str, Predictive],
    cal_set: Dataset,
    alpha: Union[NominalLevel, float],
    split_rule: Optional[CalibrationSplitRule] = None,
    seed: int = 0,
    predictive_config: PredictiveModelConfig = None,
    continuous: bool = False
) -> EpicPipeline:
    """
    Calibrate EPICSCORE on a held-out calibration set.

    Args:
        base_score: Score function fitted on training data disjoint from cal_set.
        predictive_kind: Predictive family, or an unfitted model instance.
        cal_set: Calibration data.
        alpha: Miscoverage level.
        split_rule: D_cal,1 / D_cal,2 split rule.
        seed: Seed for the split and the predictive fit.
        predictive_config: Kind-specific predictive configuration.
        continuous: For classification scores, fit a continuous predictive on
            the score values instead of a label predictive.

    Returns:
        EpicPipeline.

    Raises:
        SplitTooSmallError: If either calibration part has fewer than min_part points.
    """
    rule = split_rule or CalibrationSplitRule()
    level = NominalLevel.of(alpha)
    cal1, cal2 = split_calibration(np.arange(cal_set.n_samples), seed, rule)
    if cal1.size < rule.min_part or cal2.size < rule.min_part:
        raise SplitTooSmallError(
            f"Calibration split {cal1.size}/{cal2.size} is below the minimum of "
            f"{rule.min_part} points per part"
        )

    X1, y1 = cal_set.features[cal1], cal_set.target[cal1]

    if isinstance(predictive_kind, (PredictiveCdfModel, LabelPredictiveModel)):
        predictive = predictive_kind
        if isinstance(predictive, LabelPredictiveModel):
            predictive.fit(X1, y1)
        else:
            predictive.fit(X1, base_score(X1, y1))
        kind_label = type(predictive).__name__
    else:
        kind = PredictiveKind(predictive_kind)
        kind_label = kind.value
        if base_score.is_classification and not continuous:
            n_classes = cal_set.n_classes or int(np.max(y1)) + 1
            predictive = _label_predictive(kind, n_classes, predictive_config, seed)
            predictive.fit(X1, y1)
        else:
            predictive = fit_predictive(kind, X1, base_score(X1, y1), predictive_config, seed)

    transformed = _transformed_scores(
        base_score, predictive, cal_set.features[cal2], cal_set.target[cal2]
    )
    pipeline = EpicPipeline(
        score=base_score,
        predictive=predictive,
        calibration=calibrate(transformed, level, score_id=f"epic_{base_score.score_id}_{kind_label}"),
        cal1_indices=cal1,
        cal2_indices=cal2,
        seed=seed,
        metadata={"predictive": kind_label},
    )
    logger.debug(f"Calibrated {pipeline}")
    return pipeline


# ----------------------------------------------------------------------------
# Regions
# ----------------------------------------------------------------------------

def epic_interval_regression(pipeline: EpicPipeline, X) -> PredictionBand:
    """
    Band g(x) +/- r(x) with r(x) = F^-1(t | x, D) clamped at 0.

    A +inf threshold gives full-space (degenerate) bands.
    """
    if pipeline.score.kind != ScoreKind.RESIDUAL:
        raise ValueError(f"Regression bands need a residual score, got {pipeline.score.kind.value}")
    X = as_matrix(X)
    m = X.shape[0]
    if pipeline.calibration.is_infinite:
        return PredictionBand.full_space(m)

    t = float(pipeline.threshold)
    g = pipeline.score.point_predictions(X)
    if t <= 0.0:
        radius = np.zeros(m)
    else:
        radius = np.maximum(pipeline.predictive.invert_cdf(X, min(t, 1.0)), 0.0)
    return PredictionBand(lo=g - radius, hi=g + radius)


def epic_interval_normal_closed_form(g_val, mu, sigma, t) -> PredictionBand:
    """
    Closed-form band (g - mu) +/- sigma sqrt(2) erfinv(2t - 1).

    For t < 0.5 the half-width is negative and the band is flagged empty.

    Raises:
        InvalidTError: If any t lies outside (0, 1).
        ValueError: If any sigma is not positive.
    """
    g_val, mu, sigma, t = np.broadcast_arrays(
        *(np.atleast_1d(np.asarray(v, dtype=float)) for v in (g_val, mu, sigma, t))
    )
    if np.any(~(t > 0.0)) or np.any(~(t < 1.0)):
        raise InvalidTError(f"t must lie strictly between 0 and 1: {t[(t <= 0) | (t >= 1)][:5]}")
    if np.any(~(sigma > 0.0)):
        raise ValueError("sigma must be positive")

    center = g_val - mu
    half_width = sigma * math.sqrt(2.0) * erfinv(2.0 * t - 1.0)
    return PredictionBand(lo=center - half_width, hi=center + half_width)


def epic_interval_cqr(pipeline: EpicPipeline, X) -> PredictionBand:
    """Band [q_lo(x) - c(x), q_hi(x) + c(x)] with c(x) = F^-1(t | x, D), possibly negative."""
    if pipeline.score.kind != ScoreKind.CQR:
        raise ValueError(f"CQR bands need a cqr score, got {pipeline.score.kind.value}")
    X = as_matrix(X)
    if pipeline.calibration.is_infinite:
        return PredictionBand.full_space(X.shape[0])

    q_lo, q_hi = pipeline.score.quantile_predictions(X)
    correction = pipeline.predictive.invert_cdf(X, min(float(pipeline.threshold), 1.0))
    return PredictionBand(lo=q_lo - correction, hi=q_hi + correction)


def epic_set_classification(
    predictive_probs,
    base_probs,
    t: float,
    score_kind: Union[ScoreKind, str] = ScoreKind.APS
) -> PredictionSet:
    """
    Label set {y : s'(x, y) <= t} for one point.

    Args:
        predictive_probs: P(y | x, D) over the label alphabet.
        base_probs: Base classifier probabilities defining the score order.
        t: Threshold on s'.
        score_kind: Base score (aps or neg_prob; both give the same set).

    Raises:
        AlphabetMismatchError: If the two vectors differ in length.
    """
    predictive_probs = np.asarray(predictive_probs, dtype=float).reshape(-1)
    base_probs = np.asarray(base_probs, dtype=float).reshape(-1)
    if predictive_probs.shape != base_probs.shape:
        raise AlphabetMismatchError(
            f"Predictive over {predictive_probs.size} labels but base over {base_probs.size}"
        )
    base_scores = label_score_matrix(base_probs[None, :], ScoreKind(score_kind))
    transformed = epic_label_scores(predictive_probs[None, :], base_scores)[0]
    return _make_set(transformed, t)


def _make_set(transformed: np.ndarray, t: float) -> PredictionSet:
    scores = {label: float(value) for label, value in enumerate(transformed)}
    return PredictionSet(
        labels=frozenset(label for label, value in scores.items() if value <= t),
        scores=scores,
    )


def epic_sets(pipeline: EpicPipeline, X) -> List[PredictionSet]:
    """Label sets for every row of X from a classification pipeline."""
    if not pipeline.score.is_classification:
        raise ValueError("Prediction sets need a classification score")
    X = as_matrix(X)
    base_scores = pipeline.score.label_scores(X)
    if pipeline.label_mode:
        transformed = epic_label_scores(predictive_label_dist(pipeline.predictive, X), base_scores)
    else:
        # Continuous mode: F(s(x, y) | x, D) for every label
        transformed = np.column_stack([
            pipeline.predictive.cdf(X, base_scores[:, label])
            for label in range(base_scores.shape[1])
        ])
    return [_make_set(row, pipeline.threshold) for row in transformed]
