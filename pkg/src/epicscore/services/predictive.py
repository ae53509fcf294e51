"""
Bayesian predictive-CDF models for nonconformity scores.

A PredictiveCdfModel is fitted on D = {(x_i, s_i)} and exposes the predictive
CDF F(s | x, D) together with its inverse. Concrete kinds live here
(knn_empirical, label models) and in the gp, mdn and bart modules.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy.special import ndtr
from sklearn.neighbors import NearestNeighbors
from sklearn.preprocessing import StandardScaler

from epicscore.exceptions import (
    InsufficientDataError,
    InvalidTError,
    LengthMismatchError,
    NonFiniteScoreError,
    NotAClassifierError,
)
from epicscore.models.config import (
    BartConfig,
    GpConfig,
    KnnEmpiricalConfig,
    MdnConfig,
    PredictiveKind,
)
from epicscore.services.scores import as_matrix
from epicscore.utils.logger import get_logger

logger = get_logger(__name__)

MIN_FIT_POINTS = 5
INVERSION_TOL = 1e-8          # normalized score units
BRACKET_LIMIT = 1e12          # normalized score units
MAX_BRACKET_STEPS = 200
MAX_BISECTION_STEPS = 400


@dataclass(frozen=True)
class AffineNormalizer:
    """Affine score transform z = (s - shift) / scale."""

    shift: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        """Validate scale."""
        if not math.isfinite(self.shift) or not self.scale > 0 or not math.isfinite(self.scale):
            raise ValueError(f"Invalid normalizer: shift={self.shift}, scale={self.scale}")

    @classmethod
    def fit(cls, values: np.ndarray) -> "AffineNormalizer":
        """Center on the mean and scale by the standard deviation."""
        values = np.asarray(values, dtype=float)
        scale = float(np.std(values))
        if scale < 1e-12:
            scale = 1.0
        return cls(shift=float(np.mean(values)), scale=scale)

    def transform(self, s):
        return (np.asarray(s, dtype=float) - self.shift) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.shift

    def to_dict(self) -> dict:
        return {"shift": self.shift, "scale": self.scale}

    @classmethod
    def from_dict(cls, data: dict) -> "AffineNormalizer":
        return cls(shift=float(data["shift"]), scale=float(data["scale"]))


def scaler_to_dict(scaler: StandardScaler) -> dict:
    """Fitted StandardScaler parameters as plain lists."""
    return {
        "mean": scaler.mean_.tolist(),
        "scale": scaler.scale_.tolist(),
        "var": scaler.var_.tolist(),
        "n_samples_seen": int(np.max(scaler.n_samples_seen_)),
    }


def scaler_from_dict(data: dict) -> StandardScaler:
    """Rebuild a fitted StandardScaler."""
    scaler = StandardScaler()
    scaler.mean_ = np.asarray(data["mean"], dtype=float)
    scaler.scale_ = np.asarray(data["scale"], dtype=float)
    scaler.var_ = np.asarray(data["var"], dtype=float)
    scaler.n_features_in_ = scaler.mean_.shape[0]
    scaler.n_samples_seen_ = int(data["n_samples_seen"])
    return scaler


def mixture_cdf(pi: np.ndarray, mu: np.ndarray, sigma: np.ndarray, z: np.ndarray) -> np.ndarray:
    """
    Gaussian-mixture CDF averaged over passes.

    Args:
        pi, mu, sigma: Mixture parameters, shape (T, m, K).
        z: Evaluation points, shape (m,).

    Returns:
        (1/T) sum_t sum_k pi_tk Phi((z - mu_tk) / sigma_tk), shape (m,).
    """
    z = np.asarray(z, dtype=float)
    per_pass = np.sum(pi * ndtr((z[None, :, None] - mu) / sigma), axis=2)
    return per_pass.mean(axis=0)


def invert_by_bisection(
    cdf_fn: Callable[[np.ndarray], np.ndarray],
    t: np.ndarray,
    center: np.ndarray,
    spread: np.ndarray,
    tol: float = INVERSION_TOL,
    limit: float = BRACKET_LIMIT
) -> np.ndarray:
    """
    Smallest z with cdf_fn(z) >= t, elementwise.

    The bracket [center - spread, center + spread] is expanded geometrically
    until cdf(lo) < t (or cdf(lo) = 0) and cdf(hi) >= t, then bisected down to
    width tol. t = 0 returns the lower bracket end; t = 1 returns the upper
    bracket end.

    Args:
        cdf_fn: Vectorized CDF of shape (m,) -> (m,), non-decreasing.
        t: Target levels in [0, 1], shape (m,).
        center: Initial bracket centers, shape (m,).
        spread: Initial bracket half-widths, shape (m,), positive.
        tol: Absolute tolerance on z.
        limit: Largest |z| the bracket may reach.

    Returns:
        Upper end of the final bracket, shape (m,).
    """
    t = np.asarray(t, dtype=float)
    center = np.broadcast_to(np.asarray(center, dtype=float), t.shape).copy()
    step = np.maximum(np.broadcast_to(np.asarray(spread, dtype=float), t.shape), tol).copy()

    lo = center - step
    hi = center + step

    step_lo = step.copy()
    for _ in range(MAX_BRACKET_STEPS):
        f_lo = cdf_fn(lo)
        move = (f_lo >= t) & (f_lo > 0.0) & (lo > -limit)
        if not np.any(move):
            break
        step_lo = np.where(move, step_lo * 2.0, step_lo)
        lo = np.where(move, np.maximum(center - step_lo, -limit), lo)

    step_hi = step.copy()
    for _ in range(MAX_BRACKET_STEPS):
        f_hi = cdf_fn(hi)
        move = (f_hi < t) & (hi < limit)
        if not np.any(move):
            break
        step_hi = np.where(move, step_hi * 2.0, step_hi)
        hi = np.where(move, np.minimum(center + step_hi, limit), hi)

    at_zero = t <= 0.0
    at_one = t >= 1.0
    active = ~(at_zero | at_one)

    for _ in range(MAX_BISECTION_STEPS):
        open_ = active & (hi - lo > tol)
        if not np.any(open_):
            break
        mid = 0.5 * (lo + hi)
        # Brackets whose midpoint no longer moves in floating point are done
        open_ &= (mid != lo) & (mid != hi)
        if not np.any(open_):
            break
        upper = cdf_fn(mid) >= t
        hi = np.where(open_ & upper, mid, hi)
        lo = np.where(open_ & ~upper, mid, lo)

    return np.where(at_zero, lo, hi)


def _check_levels(t, m: int) -> np.ndarray:
    t = np.broadcast_to(np.asarray(t, dtype=float), (m,)).copy()
    if np.any(np.isnan(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise InvalidTError(f"CDF levels must lie in [0, 1]: {t[(t < 0) | (t > 1)][:5]}")
    return t


class PredictiveCdfModel(ABC):
    """
    Fitted predictive distribution F(s | x, D) of a nonconformity score.

    Features are standardized and scores affinely normalized before the
    kind-specific fit; cdf and invert_cdf work in original units. All Monte
    Carlo randomness is drawn at fit time, so cdf is a deterministic function
    of the fitted state.
    """

    kind: PredictiveKind
    normalize_scores = True

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.feature_scaler: Optional[StandardScaler] = None
        self.score_normalizer: Optional[AffineNormalizer] = None
        self.n_fit: int = 0

    @property
    def is_fitted(self) -> bool:
        return self.score_normalizer is not None

    def fit(self, X, s) -> "PredictiveCdfModel":
        """
        Fit on D = {(x_i, s_i)}.

        Raises:
            InsufficientDataError: If fewer than 5 points.
            NonFiniteScoreError: If any score is NaN or infinite.
        """
        X = as_matrix(X)
        s = np.asarray(s, dtype=float).reshape(-1)
        if X.shape[0] != s.shape[0]:
            raise LengthMismatchError(f"{X.shape[0]} feature rows but {s.shape[0]} scores")
        if s.size < MIN_FIT_POINTS:
            raise InsufficientDataError(
                f"{self.kind.value} needs at least {MIN_FIT_POINTS} points, got {s.size}"
            )
        if not np.all(np.isfinite(s)):
            raise NonFiniteScoreError("Predictive model scores must be finite")

        self.feature_scaler = StandardScaler().fit(X)
        self.score_normalizer = (
            AffineNormalizer.fit(s) if self.normalize_scores else AffineNormalizer()
        )
        self.n_fit = int(s.size)
        self._fit(self.feature_scaler.transform(X), self.score_normalizer.transform(s))
        return self

    @abstractmethod
    def _fit(self, Z: np.ndarray, z: np.ndarray) -> None:
        """Kind-specific fit on standardized features and normalized scores."""

    @abstractmethod
    def _prepare(self, Z: np.ndarray) -> Any:
        """Per-point predictive state at standardized features Z."""

    @abstractmethod
    def _cdf_from(self, state: Any, z: np.ndarray) -> np.ndarray:
        """CDF at normalized scores z, shape (m,), from a prepared state."""

    def _bracket_hint(self, state: Any, m: int) -> Tuple[np.ndarray, np.ndarray]:
        """Initial (center, half-width) for inversion in normalized units."""
        return np.zeros(m), np.ones(m)

    def _check_fitted(self) -> None:
        if not self.is_fitted:
            raise RuntimeError(f"{type(self).__name__} is not fitted")

    def prepare(self, X) -> Any:
        """Predictive state at X, reusable across cdf_from calls."""
        self._check_fitted()
        return self._prepare(self.feature_scaler.transform(as_matrix(X)))

    def cdf_from(self, state: Any, s) -> np.ndarray:
        """F(s | x, D) from a prepared state."""
        z = self.score_normalizer.transform(s)
        return np.clip(self._cdf_from(state, z), 0.0, 1.0)

    def cdf(self, X, s) -> np.ndarray:
        """
        Predictive CDF F(s_i | x_i, D).

        Args:
            X: Features, shape (m, p).
            s: Scores, shape (m,) or scalar.

        Returns:
            Values in [0, 1], shape (m,).
        """
        X = as_matrix(X)
        s = np.broadcast_to(np.asarray(s, dtype=float), (X.shape[0],))
        return self.cdf_from(self.prepare(X), s)

    def invert_cdf(self, X, t) -> np.ndarray:
        """
        Smallest s with F(s | x, D) >= t, per point.

        Args:
            X: Features, shape (m, p).
            t: Levels in [0, 1], shape (m,) or scalar.

        Returns:
            Scores, shape (m,), in original units.

        Raises:
            InvalidTError: If any level lies outside [0, 1].
        """
        X = as_matrix(X)
        levels = _check_levels(t, X.shape[0])
        state = self.prepare(X)
        z = self._invert(state, levels)
        return self.score_normalizer.inverse(z)

    def _invert(self, state: Any, t: np.ndarray) -> np.ndarray:
        center, spread = self._bracket_hint(state, t.shape[0])
        return invert_by_bisection(
            lambda z: np.clip(self._cdf_from(state, z), 0.0, 1.0), t, center, spread
        )

    # Serialization hooks for the model store

    def export_state(self) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
        """(params, arrays) describing the fitted state."""
        raise NotImplementedError(f"{type(self).__name__} cannot be saved")

    def restore_state(self, params: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> None:
        """Inverse of export_state."""
        raise NotImplementedError(f"{type(self).__name__} cannot be loaded")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(seed={self.seed}, n_fit={self.n_fit})"


def default_knn_neighbors(n: int) -> int:
    """k = max(50, n / 20), capped at n."""
    return int(min(max(50, n // 20), n))


class KnnEmpiricalModel(PredictiveCdfModel):
    """Empirical CDF of the scores of the k nearest fitted points."""

    kind = PredictiveKind.KNN_EMPIRICAL
    normalize_scores = False

    def __init__(self, config: Optional[KnnEmpiricalConfig] = None, seed: int = 0):
        super().__init__(seed)
        self.config = config or KnnEmpiricalConfig()
        self.n_neighbors: int = 0
        self._index: Optional[NearestNeighbors] = None
        self._features: Optional[np.ndarray] = None
        self._scores: Optional[np.ndarray] = None

    def _fit(self, Z: np.ndarray, z: np.ndarray) -> None:
        n = z.size
        k = self.config.n_neighbors or default_knn_neighbors(n)
        self.n_neighbors = int(min(k, n))
        self._features = Z
        self._scores = z
        self._index = NearestNeighbors(n_neighbors=self.n_neighbors).fit(Z)
        logger.debug(f"knn_empirical fitted on {n} points with k={self.n_neighbors}")

    def _prepare(self, Z: np.ndarray) -> np.ndarray:
        _, idx = self._index.kneighbors(Z)
        return np.sort(self._scores[idx], axis=1)

    def _cdf_from(self, state: np.ndarray, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.sum(state <= z[:, None], axis=1) / state.shape[1]

    def _invert(self, state: np.ndarray, t: np.ndarray) -> np.ndarray:
        k = state.shape[1]
        rank = np.ceil(t * k - 1e-9).astype(np.int64)
        rank = np.clip(rank, 1, k)
        return state[np.arange(state.shape[0]), rank - 1]

    def neighbor_scores(self, X) -> np.ndarray:
        """Sorted neighbor scores, shape (m, k), in original units."""
        return self.score_normalizer.inverse(self.prepare(X))

    def export_state(self):
        params = {"n_neighbors": self.n_neighbors}
        arrays = {"features": self._features, "scores": self._scores}
        return params, arrays

    def restore_state(self, params, arrays) -> None:
        self.n_neighbors = int(params["n_neighbors"])
        self._features = np.asarray(arrays["features"], dtype=float)
        self._scores = np.asarray(arrays["scores"], dtype=float)
        self._index = NearestNeighbors(n_neighbors=self.n_neighbors).fit(self._features)


class OracleCdfModel(PredictiveCdfModel):
    """
    Predictive given by a known conditional CDF F(s | x).

    Used to check the calibration mechanism against the true score
    distribution of synthetic data. Fitting only records the data size.
    """

    kind = None
    normalize_scores = False

    def __init__(
        self,
        cdf_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
        seed: int = 0
    ):
        super().__init__(seed)
        self.cdf_fn = cdf_fn

    def fit(self, X, s) -> "OracleCdfModel":
        self.score_normalizer = AffineNormalizer()
        self.n_fit = int(np.asarray(s).size)
        return self

    def _fit(self, Z, z) -> None:
        pass

    def prepare(self, X) -> np.ndarray:
        self._check_fitted()
        return as_matrix(X)

    def _prepare(self, Z):
        return Z

    def _cdf_from(self, state, z):
        return np.asarray(self.cdf_fn(state, np.asarray(z, dtype=float)), dtype=float)


# ----------------------------------------------------------------------------
# Label predictive distributions
# ----------------------------------------------------------------------------

class LabelPredictiveModel(ABC):
    """Predictive distribution of labels P(y | x, D)."""

    n_classes: int

    @abstractmethod
    def fit(self, X, y) -> "LabelPredictiveModel":
        """Fit on D = {(x_i, y_i)}."""

    @abstractmethod
    def predict_proba(self, X) -> np.ndarray:
        """Label probabilities, shape (m, K), rows summing to one."""


class KnnLabelModel(LabelPredictiveModel):
    """k-NN label frequencies with Dirichlet(smoothing) pseudo-counts."""

    def __init__(self, n_classes: int, n_neighbors: Optional[int] = None, smoothing: float = 1.0):
        self.n_classes = int(n_classes)
        self.n_neighbors = n_neighbors
        self.smoothing = float(smoothing)
        self.feature_scaler: Optional[StandardScaler] = None
        self._index: Optional[NearestNeighbors] = None
        self._labels: Optional[np.ndarray] = None

    def fit(self, X, y) -> "KnnLabelModel":
        X = as_matrix(X)
        y = np.asarray(y).astype(np.int64).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise LengthMismatchError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if y.size < MIN_FIT_POINTS:
            raise InsufficientDataError(
                f"Label model needs at least {MIN_FIT_POINTS} points, got {y.size}"
            )
        k = self.n_neighbors or default_knn_neighbors(y.size)
        self.n_neighbors = int(min(k, y.size))
        self.feature_scaler = StandardScaler().fit(X)
        self._index = NearestNeighbors(n_neighbors=self.n_neighbors).fit(
            self.feature_scaler.transform(X)
        )
        self._labels = y
        return self

    def predict_proba(self, X) -> np.ndarray:
        Z = self.feature_scaler.transform(as_matrix(X))
        _, idx = self._index.kneighbors(Z)
        counts = np.stack(
            [np.bincount(row, minlength=self.n_classes) for row in self._labels[idx]]
        ).astype(float)
        counts += self.smoothing
        return counts / counts.sum(axis=1, keepdims=True)


def predictive_label_dist(model, X) -> np.ndarray:
    """
    P(y | x, D) for each row of X.

    Raises:
        NotAClassifierError: If model is a score (regression) predictive.
    """
    if not isinstance(model, LabelPredictiveModel):
        raise NotAClassifierError(
            f"{type(model).__name__} is not a label predictive model"
        )
    return model.predict_proba(X)


PredictiveModelConfig = Union[GpConfig, MdnConfig, BartConfig, KnnEmpiricalConfig, None]


def fit_predictive(
    kind: Union[PredictiveKind, str],
    X,
    s,
    config: PredictiveModelConfig = None,
    seed: int = 0
) -> PredictiveCdfModel:
    """
    Fit a predictive-CDF model of the given kind on D = {(x_i, s_i)}.

    Args:
        kind: Model family.
        X: Features of D_cal,1.
        s: Base scores of D_cal,1.
        config: Kind-specific configuration (defaults when None).
        seed: Seed for subsampling, initialization and Monte Carlo draws.

    Returns:
        Fitted PredictiveCdfModel.

    Raises:
        InsufficientDataError: If D has fewer than 5 points.
        SingularKernelError: If the GP kernel cannot be factorized.
    """
    kind = PredictiveKind(kind)

    if kind == PredictiveKind.KNN_EMPIRICAL:
        model = KnnEmpiricalModel(config, seed=seed)
    elif kind == PredictiveKind.GP_EXACT:
        from epicscore.services.gp import GaussianProcessModel
        model = GaussianProcessModel(config, seed=seed)
    elif kind == PredictiveKind.MDN_DROPOUT:
        from epicscore.services.mdn import MixtureDensityModel
        model = MixtureDensityModel(config, seed=seed)
    else:
        from epicscore.services.bart import BartModel
        model = BartModel(config, seed=seed)

    model.fit(X, s)
    logger.debug(f"Fitted {kind.value} predictive on {model.n_fit} points")
    return model


def create_model(kind: Union[PredictiveKind, str], seed: int = 0) -> PredictiveCdfModel:
    """Unfitted model instance of a kind with default configuration."""
    kind = PredictiveKind(kind)
    if kind == PredictiveKind.KNN_EMPIRICAL:
        return KnnEmpiricalModel(seed=seed)
    if kind == PredictiveKind.GP_EXACT:
        from epicscore.services.gp import GaussianProcessModel
        return GaussianProcessModel(seed=seed)
    if kind == PredictiveKind.MDN_DROPOUT:
        from epicscore.services.mdn import MixtureDensityModel
        return MixtureDensityModel(seed=seed)
    from epicscore.services.bart import BartModel
    return BartModel(seed=seed)


def gaussian_cdf(mu: np.ndarray, sd: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Phi((z - mu) / sd), elementwise."""
    return ndtr((np.asarray(z, dtype=float) - mu) / sd)
