"""
Base predictors and nonconformity scores.

Predictors supply g(x), q_lo(x), q_hi(x) or class probabilities; score
functions turn predictions and observed targets into nonconformity scores
s(x, y) that EPICSCORE and the baselines calibrate.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import torch
from sklearn.neighbors import NearestNeighbors
from sklearn.preprocessing import StandardScaler

from epicscore.exceptions import InsufficientDataError, LengthMismatchError, UnknownLabelError
from epicscore.models.config import PredictorConfig, PredictorKind
from epicscore.services.neural import (
    FeedForward,
    adaptive_batch_size,
    holdout_split,
    to_tensor,
    train_network,
)
from epicscore.utils.logger import get_logger

logger = get_logger(__name__)

SIGMA_FLOOR = 1e-6
MLP_MIN_SAMPLES = 10
PROBABILITY_ATOL = 1e-9

ArrayLike = Union[float, Sequence[float], np.ndarray]


def as_matrix(X) -> np.ndarray:
    """Features as a float (n, p) matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


# ----------------------------------------------------------------------------
# Predictors
# ----------------------------------------------------------------------------

class Predictor(ABC):
    """Fitted point, quantile or probability predictor on standardized features."""
    
    kind: PredictorKind
    
    def __init__(self):
        self.feature_scaler = StandardScaler()
        self._fitted = False
    
    @property
    def is_fitted(self) -> bool:
        return self._fitted
    
    @abstractmethod
    def fit(self, X, y) -> "Predictor":
        """Fit on training features and targets."""
    
    @abstractmethod
    def predict(self, X) -> np.ndarray:
        """Predictions at X, shape (m,)."""
    
    def _check_fitted(self) -> None:
        if not self._fitted:
            raise RuntimeError(f"{type(self).__name__} is not fitted")
    
    def __repr__(self) -> str:
        return f"{type(self).__name__}(kind={self.kind.value}, fitted={self._fitted})"


class KnnPredictor(Predictor):
    """k-NN mean (knn_mean) or empirical-quantile (knn_quantile) regressor."""
    
    def __init__(self, n_neighbors: int = 10, quantile: Optional[float] = None):
        super().__init__()
        self.n_neighbors = n_neighbors
        self.quantile = quantile
        self.kind = PredictorKind.KNN_MEAN if quantile is None else PredictorKind.KNN_QUANTILE
        self._index: Optional[NearestNeighbors] = None
        self._targets: Optional[np.ndarray] = None
    
    def fit(self, X, y) -> "KnnPredictor":
        X = as_matrix(X)
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise LengthMismatchError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
        if X.shape[0] < self.n_neighbors:
            raise InsufficientDataError(
                f"k-NN with k={self.n_neighbors} needs at least {self.n_neighbors} rows, "
                f"got {X.shape[0]}"
            )
        Z = self.feature_scaler.fit_transform(X)
        self._index = NearestNeighbors(n_neighbors=self.n_neighbors).fit(Z)
        self._targets = y.copy()
        self._fitted = True
        return self
    
    def neighbor_targets(self, X) -> np.ndarray:
        """Targets of the k nearest training rows, shape (m, k)."""
        self._check_fitted()
        Z = self.feature_scaler.transform(as_matrix(X))
        _, idx = self._index.kneighbors(Z)
        return self._targets[idx]
    
    def predict(self, X) -> np.ndarray:
        neighbors = self.neighbor_targets(X)
        if self.quantile is None:
            return neighbors.mean(axis=1)
        return np.quantile(neighbors, self.quantile, axis=1)


class KnnClassifierPredictor(Predictor):
    """k-NN label-frequency classifier (knn_proba)."""
    
    kind = PredictorKind.KNN_PROBA
    
    def __init__(self, n_neighbors: int = 10, n_classes: Optional[int] = None):
        super().__init__()
        self.n_neighbors = n_neighbors
        self.n_classes = n_classes
        self._index: Optional[NearestNeighbors] = None
        self._labels: Optional[np.ndarray] = None
    
    def fit(self, X, y) -> "KnnClassifierPredictor":
        X = as_matrix(X)
        y = np.asarray(y).astype(np.int64).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise LengthMismatchError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if X.shape[0] < self.n_neighbors:
            raise InsufficientDataError(
                f"k-NN with k={self.n_neighbors} needs at least {self.n_neighbors} rows"
            )
        if self.n_classes is None:
            self.n_classes = int(y.max()) + 1
        Z = self.feature_scaler.fit_transform(X)
        self._index = NearestNeighbors(n_neighbors=self.n_neighbors).fit(Z)
        self._labels = y.copy()
        self._fitted = True
        return self
    
    def predict_proba(self, X) -> np.ndarray:
        """Neighbor label frequencies, shape (m, K)."""
        self._check_fitted()
        Z = self.feature_scaler.transform(as_matrix(X))
        _, idx = self._index.kneighbors(Z)
        labels = self._labels[idx]
        counts = np.stack(
            [np.bincount(row, minlength=self.n_classes) for row in labels]
        ).astype(float)
        return counts / counts.sum(axis=1, keepdims=True)
    
    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


def pinball_loss(quantile: float):
    """Pinball (quantile) loss for a single-output network."""
    def loss(output: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        diff = target - output.squeeze(-1)
        return torch.mean(torch.maximum(quantile * diff, (quantile - 1.0) * diff))
    return loss


def mse_loss(output: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return torch.mean((output.squeeze(-1) - target) ** 2)


class MlpPredictor(Predictor):
    """MLP trained with squared error (mlp_mean) or pinball loss (mlp_pinball)."""
    
    def __init__(self, config: PredictorConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.seed = seed
        self.quantile = config.quantile if config.kind == PredictorKind.MLP_PINBALL else None
        self.kind = PredictorKind.MLP_MEAN if self.quantile is None else PredictorKind.MLP_PINBALL
        self._network: Optional[FeedForward] = None
        self._y_shift = 0.0
        self._y_scale = 1.0
    
    def fit(self, X, y) -> "MlpPredictor":
        X = as_matrix(X)
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise LengthMismatchError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
        if X.shape[0] < MLP_MIN_SAMPLES:
            raise InsufficientDataError(
                f"MLP needs at least {MLP_MIN_SAMPLES} rows, got {X.shape[0]}"
            )
        
        Z = self.feature_scaler.fit_transform(X)
        self._y_shift = float(np.mean(y))
        self._y_scale = float(np.std(y)) or 1.0
        target = (y - self._y_shift) / self._y_scale
        
        fit_idx, val_idx = holdout_split(len(y), self.config.validation_fraction, self.seed)
        torch.manual_seed(self.seed)
        self._network = FeedForward(Z.shape[1], self.config.hidden_layers, 1, self.config.dropout)
        loss_fn = mse_loss if self.quantile is None else pinball_loss(self.quantile)
        
        summary = train_network(
            self._network,
            loss_fn,
            to_tensor(Z[fit_idx]), to_tensor(target[fit_idx]),
            to_tensor(Z[val_idx]), to_tensor(target[val_idx]),
            learning_rate=self.config.learning_rate,
            max_epochs=self.config.max_epochs,
            patience=self.config.patience,
            batch_size=self.config.batch_size or adaptive_batch_size(len(fit_idx)),
            seed=self.seed,
        )
        logger.debug(f"{self.kind.value} fitted: {summary}")
        self._fitted = True
        return self
    
    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        Z = self.feature_scaler.transform(as_matrix(X))
        self._network.eval()
        with torch.no_grad():
            out = self._network(to_tensor(Z)).squeeze(-1).numpy().astype(float)
        return out * self._y_scale + self._y_shift


class ExternalPredictor(Predictor):
    """
    Predictions supplied by an outside model, looked up by feature row.
    
    Rows are matched exactly (nearest row at distance zero); duplicated
    feature rows resolve to the first occurrence.
    """
    
    kind = PredictorKind.EXTERNAL
    
    def __init__(self, features, values):
        super().__init__()
        self._features = as_matrix(features)
        self._values = np.asarray(values, dtype=float).reshape(-1)
        if self._features.shape[0] != self._values.shape[0]:
            raise LengthMismatchError(
                f"{self._features.shape[0]} feature rows but {self._values.shape[0]} predictions"
            )
        self._index = NearestNeighbors(n_neighbors=1).fit(self._features)
        self._fitted = True
    
    def fit(self, X, y) -> "ExternalPredictor":
        # Already carries its predictions
        return self
    
    def predict(self, X) -> np.ndarray:
        X = as_matrix(X)
        dist, idx = self._index.kneighbors(X)
        scale = 1e-9 * max(1.0, float(np.max(np.abs(self._features))))
        if np.any(dist[:, 0] > scale):
            missing = int(np.flatnonzero(dist[:, 0] > scale)[0])
            raise KeyError(f"No external prediction for feature row {X[missing].tolist()}")
        return self._values[idx[:, 0]]


@dataclass
class QuantileBand:
    """Pair of quantile predictors with the crossing fix applied at prediction."""
    
    lower: Predictor
    upper: Predictor
    
    def predict(self, X) -> Tuple[np.ndarray, np.ndarray]:
        """(q_lo, q_hi) with q_lo <= q_hi pointwise."""
        lo = self.lower.predict(X)
        hi = self.upper.predict(X)
        crossed = lo > hi
        if np.any(crossed):
            logger.debug(f"Sorted {int(crossed.sum())} crossing quantile pairs")
        return np.minimum(lo, hi), np.maximum(lo, hi)


def fit_base_predictor(
    config: PredictorConfig,
    X,
    y,
    seed: int = 0,
    n_classes: Optional[int] = None
) -> Predictor:
    """
    Fit a base predictor described by config.
    
    Args:
        config: Predictor family and hyperparameters.
        X: Training features.
        y: Training targets (labels for knn_proba).
        seed: Seed for stochastic training.
        n_classes: Label alphabet size for classifiers.
    
    Returns:
        Fitted Predictor.
    
    Raises:
        InsufficientDataError: If n < k (k-NN) or n < 10 (MLP).
    """
    X = as_matrix(X)
    if X.shape[0] == 0:
        raise InsufficientDataError("Training split is empty")
    
    if config.kind == PredictorKind.KNN_MEAN:
        predictor = KnnPredictor(config.n_neighbors)
    elif config.kind == PredictorKind.KNN_QUANTILE:
        predictor = KnnPredictor(config.n_neighbors, quantile=config.quantile)
    elif config.kind in (PredictorKind.MLP_MEAN, PredictorKind.MLP_PINBALL):
        predictor = MlpPredictor(config, seed=seed)
    elif config.kind == PredictorKind.KNN_PROBA:
        predictor = KnnClassifierPredictor(config.n_neighbors, n_classes=n_classes)
    else:
        raise ValueError(f"Predictor kind {config.kind.value} cannot be fitted from data")
    
    return predictor.fit(X, y)


def fit_quantile_band(
    config: PredictorConfig,
    X,
    y,
    quantiles: Tuple[float, float],
    seed: int = 0
) -> QuantileBand:
    """Fit lower and upper quantile predictors of the configured family."""
    family = config.kind
    if family in (PredictorKind.KNN_MEAN, PredictorKind.KNN_QUANTILE):
        family = PredictorKind.KNN_QUANTILE
    elif family in (PredictorKind.MLP_MEAN, PredictorKind.MLP_PINBALL):
        family = PredictorKind.MLP_PINBALL
    else:
        raise ValueError(f"No quantile variant for predictor kind {config.kind.value}")
    
    lower = fit_base_predictor(
        config.model_copy(update={"kind": family, "quantile": quantiles[0]}), X, y, seed
    )
    upper = fit_base_predictor(
        config.model_copy(update={"kind": family, "quantile": quantiles[1]}), X, y, seed + 1
    )
    return QuantileBand(lower=lower, upper=upper)


def fit_mad_predictor(config: PredictorConfig, g: Predictor, X, y, seed: int = 0) -> Predictor:
    """
    Regress absolute training residuals |y - g(x)| with g's model family.
    
    Quantile families fall back to their mean variant.
    """
    residuals = np.abs(np.asarray(y, dtype=float) - g.predict(X))
    family = config.kind
    if family == PredictorKind.KNN_QUANTILE:
        family = PredictorKind.KNN_MEAN
    elif family == PredictorKind.MLP_PINBALL:
        family = PredictorKind.MLP_MEAN
    elif family not in (PredictorKind.KNN_MEAN, PredictorKind.MLP_MEAN):
        family = PredictorKind.KNN_MEAN
    return fit_base_predictor(config.model_copy(update={"kind": family}), X, residuals, seed)


# ----------------------------------------------------------------------------
# Score functions
# ----------------------------------------------------------------------------

class ScoreKind(str, Enum):
    """Nonconformity score families."""
    
    RESIDUAL = "residual"
    WEIGHTED_RESIDUAL = "weighted_residual"
    CQR = "cqr"
    CQR_R = "cqr_r"
    APS = "aps"
    NEG_PROB = "neg_prob"


def residual_score(predicted: ArrayLike, y: ArrayLike):
    """s(x, y) = |y - g(x)|."""
    return np.abs(np.asarray(y, dtype=float) - np.asarray(predicted, dtype=float))


def cqr_score(q_lo: ArrayLike, q_hi: ArrayLike, y: ArrayLike):
    """s(x, y) = max(q_lo(x) - y, y - q_hi(x)); negative inside (q_lo, q_hi)."""
    y = np.asarray(y, dtype=float)
    return np.maximum(np.asarray(q_lo, dtype=float) - y, y - np.asarray(q_hi, dtype=float))


def cqr_r_score(q_lo: ArrayLike, q_hi: ArrayLike, y: ArrayLike, floor: float = SIGMA_FLOOR):
    """CQR score divided by the floored quantile-band width."""
    width = np.maximum(np.asarray(q_hi, dtype=float) - np.asarray(q_lo, dtype=float), floor)
    return cqr_score(q_lo, q_hi, y) / width


def weighted_residual_score(
    predicted: ArrayLike,
    mad: ArrayLike,
    y: ArrayLike,
    floor: float = SIGMA_FLOOR
):
    """s(x, y) = |y - g(x)| / max(mad(x), floor)."""
    return residual_score(predicted, y) / np.maximum(np.asarray(mad, dtype=float), floor)


def _check_probabilities(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=float).reshape(-1)
    if probs.size == 0:
        raise ValueError("Probability vector is empty")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROBABILITY_ATOL:
        raise ValueError(f"Not a probability vector (sum={probs.sum():.12g})")
    return probs


def _check_label(probs: np.ndarray, y) -> int:
    if int(y) != y or not 0 <= int(y) < probs.size:
        raise UnknownLabelError(f"Label {y} outside the alphabet 0..{probs.size - 1}")
    return int(y)


def aps_score(probs, y) -> float:
    """
    Adaptive prediction set score: total probability of labels strictly
    more probable than y. Labels tied with probs[y] are excluded.
    """
    probs = _check_probabilities(probs)
    label = _check_label(probs, y)
    return float(probs[probs > probs[label]].sum())


def neg_prob_score(probs, y) -> float:
    """s(x, y) = -P(y | x)."""
    probs = _check_probabilities(probs)
    label = _check_label(probs, y)
    return float(-probs[label])


def label_score_matrix(probs: np.ndarray, kind: ScoreKind) -> np.ndarray:
    """
    Scores of every label for every row.
    
    Args:
        probs: Class probabilities, shape (m, K).
        kind: APS or NEG_PROB.
    
    Returns:
        Score matrix, shape (m, K).
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    if kind == ScoreKind.NEG_PROB:
        return -probs
    if kind == ScoreKind.APS:
        greater = probs[:, None, :] > probs[:, :, None]  # [i, y, j] = p_j > p_y
        return np.einsum("iyj,ij->iy", greater.astype(float), probs)
    raise ValueError(f"{kind.value} is not a classification score")


@dataclass
class ScoreFunction:
    """
    A nonconformity score bound to the predictors it needs.
    
    residual / weighted_residual use `predictor` (g) and `mad`;
    cqr / cqr_r use `quantiles`; aps / neg_prob use `predictor` as a
    classifier exposing predict_proba.
    """
    
    kind: ScoreKind
    predictor: Optional[Predictor] = None
    mad: Optional[Predictor] = None
    quantiles: Optional[QuantileBand] = None
    floor: float = SIGMA_FLOOR
    
    def __post_init__(self):
        """Check the required predictors are present."""
        self.kind = ScoreKind(self.kind)
        needs = {
            ScoreKind.RESIDUAL: ("predictor",),
            ScoreKind.WEIGHTED_RESIDUAL: ("predictor", "mad"),
            ScoreKind.CQR: ("quantiles",),
            ScoreKind.CQR_R: ("quantiles",),
            ScoreKind.APS: ("predictor",),
            ScoreKind.NEG_PROB: ("predictor",),
        }[self.kind]
        missing = [name for name in needs if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind.value} score needs {', '.join(missing)}")
    
    @property
    def score_id(self) -> str:
        return self.kind.value
    
    @property
    def is_classification(self) -> bool:
        return self.kind in (ScoreKind.APS, ScoreKind.NEG_PROB)
    
    @property
    def non_negative(self) -> bool:
        """Scores bounded below by zero (radius-type scores)."""
        return self.kind in (ScoreKind.RESIDUAL, ScoreKind.WEIGHTED_RESIDUAL)
    
    def point_predictions(self, X) -> np.ndarray:
        """g(x) for residual-type scores."""
        return self.predictor.predict(X)
    
    def quantile_predictions(self, X) -> Tuple[np.ndarray, np.ndarray]:
        """(q_lo(x), q_hi(x)) for CQR-type scores."""
        return self.quantiles.predict(X)
    
    def class_probabilities(self, X) -> np.ndarray:
        """Base classifier probabilities, shape (m, K)."""
        return self.predictor.predict_proba(X)
    
    def label_scores(self, X) -> np.ndarray:
        """Scores of every label at X, shape (m, K)."""
        return label_score_matrix(self.class_probabilities(X), self.kind)
    
    def __call__(self, X, y) -> np.ndarray:
        """Scores s(x_i, y_i), shape (m,)."""
        X = as_matrix(X)
        y = np.asarray(y).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise LengthMismatchError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
        
        if self.kind == ScoreKind.RESIDUAL:
            return residual_score(self.point_predictions(X), y)
        if self.kind == ScoreKind.WEIGHTED_RESIDUAL:
            return weighted_residual_score(
                self.point_predictions(X), self.mad.predict(X), y, self.floor
            )
        if self.kind == ScoreKind.CQR:
            return cqr_score(*self.quantile_predictions(X), y)
        if self.kind == ScoreKind.CQR_R:
            return cqr_r_score(*self.quantile_predictions(X), y, self.floor)
        
        scores = self.label_scores(X)
        labels = y.astype(np.int64)
        if np.any(labels < 0) or np.any(labels >= scores.shape[1]):
            raise UnknownLabelError(f"Labels outside the alphabet 0..{scores.shape[1] - 1}")
        return scores[np.arange(len(labels)), labels]
