"""
Exact Gaussian-process predictive for nonconformity scores.

RBF kernel on standardized features, constant zero mean on normalized
scores, hyperparameters chosen by grid search over the log marginal
likelihood. The predictive of a new score is Gaussian with the noise
variance included.
"""

import math
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.special import ndtr
from sklearn.metrics.pairwise import rbf_kernel

from epicscore.exceptions import SingularKernelError
from epicscore.models.config import GpConfig, PredictiveKind
from epicscore.services.predictive import PredictiveCdfModel
from epicscore.services.scores import as_matrix
from epicscore.utils.logger import get_logger

logger = get_logger(__name__)

JITTER_LEVELS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
MIN_VARIANCE = 1e-12
_LOG_2PI = math.log(2.0 * math.pi)


def rbf_gram(A: np.ndarray, B: np.ndarray, lengthscale: float) -> np.ndarray:
    """Unit-variance RBF kernel exp(-|a - b|^2 / (2 l^2))."""
    return rbf_kernel(A, B, gamma=1.0 / (2.0 * lengthscale ** 2))


def robust_cholesky(K: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Lower Cholesky factor with multiplicative diagonal jitter escalation.

    Tries K, then K with its diagonal scaled by (1 + j) for
    j = 1e-8, 1e-7, ..., 1e-4.

    Returns:
        (L, jitter used).

    Raises:
        SingularKernelError: If every level fails.
    """
    diagonal = np.diag(K).copy()
    for jitter in JITTER_LEVELS:
        K_j = K.copy()
        K_j[np.diag_indices_from(K_j)] = diagonal * (1.0 + jitter)
        try:
            L = cholesky(K_j, lower=True, check_finite=True)
        except (LinAlgError, ValueError):
            continue
        if jitter > 0.0:
            logger.warning(f"Kernel matrix needed diagonal jitter {jitter:g}")
        return L, jitter
    raise SingularKernelError(
        f"Cholesky failed on a {K.shape[0]}x{K.shape[0]} kernel after jitter up to "
        f"{JITTER_LEVELS[-1]:g}"
    )


def log_marginal_likelihood(
    Z: np.ndarray,
    z: np.ndarray,
    lengthscale: float,
    signal_variance: float,
    noise_variance: float
) -> float:
    """
    log p(z | Z) for a zero-mean GP, computed by Cholesky.

    Args:
        Z: Inputs, shape (n, p).
        z: Targets, shape (n,).
        lengthscale, signal_variance, noise_variance: Hyperparameters.
    """
    n = z.size
    K = signal_variance * rbf_gram(Z, Z, lengthscale)
    K[np.diag_indices_from(K)] += noise_variance
    L, _ = robust_cholesky(K)
    weights = cho_solve((L, True), z)
    return float(
        -0.5 * z @ weights - np.sum(np.log(np.diag(L))) - 0.5 * n * _LOG_2PI
    )


def grid_search_hyperparameters(
    Z: np.ndarray,
    z: np.ndarray,
    config: GpConfig
) -> Tuple[float, float, float, float]:
    """
    Maximize the log marginal likelihood over the configured grids.

    One eigendecomposition of the unit kernel per lengthscale gives the
    likelihood of every (signal, noise) pair in closed form.

    Returns:
        (lengthscale, signal_variance, noise_variance, log_ml).
    """
    n = z.size
    best = (config.lengthscale_grid[0], config.signal_variance_grid[0],
            config.noise_variance_grid[0], -math.inf)

    signal = np.asarray(config.signal_variance_grid)[:, None, None]
    noise = np.asarray(config.noise_variance_grid)[None, :, None]

    for lengthscale in config.lengthscale_grid:
        eigvals, eigvecs = np.linalg.eigh(rbf_gram(Z, Z, lengthscale))
        eigvals = np.clip(eigvals, 0.0, None)
        projected = (eigvecs.T @ z) ** 2

        spectrum = signal * eigvals[None, None, :] + noise  # (S, N, n)
        log_ml = (
            -0.5 * np.sum(projected / spectrum, axis=2)
            - 0.5 * np.sum(np.log(spectrum), axis=2)
            - 0.5 * n * _LOG_2PI
        )
        i, j = np.unravel_index(np.argmax(log_ml), log_ml.shape)
        if log_ml[i, j] > best[3]:
            best = (
                float(lengthscale),
                float(config.signal_variance_grid[i]),
                float(config.noise_variance_grid[j]),
                float(log_ml[i, j]),
            )
    return best


class GaussianProcessModel(PredictiveCdfModel):
    """
    Exact GP predictive F(s | x, D) = Phi((s - mu(x)) / sd(x)).

    The fit subsamples D uniformly to max_train_points under the model seed;
    the grid search runs on the first search_max_points of that subsample.
    """

    kind = PredictiveKind.GP_EXACT

    def __init__(self, config: Optional[GpConfig] = None, seed: int = 0):
        super().__init__(seed)
        self.config = config or GpConfig()
        self.lengthscale: float = 1.0
        self.signal_variance: float = 1.0
        self.noise_variance: float = 0.1
        self.jitter: float = 0.0
        self._train: Optional[np.ndarray] = None
        self._weights: Optional[np.ndarray] = None
        self._chol: Optional[np.ndarray] = None
        self._targets: Optional[np.ndarray] = None

    def _fit(self, Z: np.ndarray, z: np.ndarray) -> None:
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(z.size)[: self.config.max_train_points]
        search = order[: self.config.search_max_points]

        self.lengthscale, self.signal_variance, self.noise_variance, log_ml = (
            grid_search_hyperparameters(Z[search], z[search], self.config)
        )
        logger.debug(
            f"GP hyperparameters: lengthscale={self.lengthscale:g}, "
            f"signal={self.signal_variance:g}, noise={self.noise_variance:g} "
            f"(log ML {log_ml:.3f} on {search.size} points)"
        )

        keep = np.sort(order)
        self._set_training_data(Z[keep], z[keep])

    def _set_training_data(self, Z: np.ndarray, z: np.ndarray) -> None:
        K = self.signal_variance * rbf_gram(Z, Z, self.lengthscale)
        K[np.diag_indices_from(K)] += self.noise_variance
        self._chol, self.jitter = robust_cholesky(K)
        self._weights = cho_solve((self._chol, True), z)
        self._train = Z
        self._targets = z

    def _prepare(self, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        cross = self.signal_variance * rbf_gram(Z, self._train, self.lengthscale)
        mean = cross @ self._weights
        v = solve_triangular(self._chol, cross.T, lower=True)
        variance = self.signal_variance - np.sum(v ** 2, axis=0) + self.noise_variance
        return mean, np.sqrt(np.maximum(variance, MIN_VARIANCE))

    def _cdf_from(self, state, z):
        mean, sd = state
        return ndtr((np.asarray(z, dtype=float) - mean) / sd)

    def _bracket_hint(self, state, m):
        return state

    def predict_mean_sd(self, X) -> Tuple[np.ndarray, np.ndarray]:
        """Predictive mean and standard deviation of the score, original units."""
        mean, sd = self.prepare(X)
        return self.score_normalizer.inverse(mean), sd * self.score_normalizer.scale

    def export_state(self):
        params = {
            "lengthscale": self.lengthscale,
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
            "config": self.config.model_dump(),
        }
        return params, {"train": self._train, "targets": self._targets}

    def restore_state(self, params, arrays) -> None:
        self.config = GpConfig(**params["config"])
        self.lengthscale = float(params["lengthscale"])
        self.signal_variance = float(params["signal_variance"])
        self.noise_variance = float(params["noise_variance"])
        self._set_training_data(
            np.asarray(arrays["train"], dtype=float), np.asarray(arrays["targets"], dtype=float)
        )


def fit_gp_fixed(
    X,
    s,
    lengthscale: float,
    signal_variance: float,
    noise_variance: float,
    seed: int = 0
) -> GaussianProcessModel:
    """GP predictive with fixed hyperparameters (single-point grids)."""
    config = GpConfig(
        lengthscale_grid=[lengthscale],
        signal_variance_grid=[signal_variance],
        noise_variance_grid=[noise_variance],
        max_train_points=max(5, as_matrix(X).shape[0]),
    )
    return GaussianProcessModel(config, seed=seed).fit(X, s)
