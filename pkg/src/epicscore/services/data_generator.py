"""
Synthetic data generators.

A heteroscedastic, bimodal-in-x regression problem whose middle region is
sparse and noisy, and Gaussian-blob classification with known posteriors.
"""

import math
from typing import Optional

import numpy as np
from scipy.special import softmax

from epicscore.exceptions import InvalidNError
from epicscore.models.dataset import Dataset
from epicscore.utils.logger import get_logger

logger = get_logger(__name__)

OUTER_FRACTION = 0.425          # per outer region
OUTER_LEFT = (0.0, 1.5)
OUTER_RIGHT = (8.0, 10.0)
MIDDLE_SHIFT = 1.5
MIDDLE_WIDTH = 6.5
MIDDLE_BETA = (8.0, 8.0)
OUTER_NOISE = 0.1
MIDDLE_NOISE = 2.1


def noise_levels(variance_convention: str = "sd") -> tuple:
    """(outer sd, middle sd) under the chosen reading of the noise parameters."""
    if variance_convention == "sd":
        return OUTER_NOISE, MIDDLE_NOISE
    if variance_convention == "var":
        return math.sqrt(OUTER_NOISE), math.sqrt(MIDDLE_NOISE)
    raise ValueError(f"variance_convention must be 'sd' or 'var': {variance_convention}")


def bimodal_mean(X: np.ndarray) -> np.ndarray:
    """E[Y | x] = 2 sin(x)."""
    return 2.0 * np.sin(np.asarray(X, dtype=float).reshape(-1))


def in_middle_region(X: np.ndarray) -> np.ndarray:
    """True for x drawn from the sparse middle component."""
    x = np.asarray(X, dtype=float).reshape(-1)
    return (x > OUTER_LEFT[1]) & (x < OUTER_RIGHT[0])


def generate_bimodal_dgp(n: int, seed: int, variance_convention: str = "sd") -> Dataset:
    """
    Sample the sparse-middle regression problem.

    floor(0.425 n) points each come from X ~ U(0, 1.5) and X ~ U(8, 10) with
    Y ~ N(2 sin X, 0.1^2); the remaining points have X ~ 1.5 + 6.5 Beta(8, 8)
    and Y ~ N(2 sin X, 2.1^2). Rows are shuffled.

    Args:
        n: Sample size, at least 8.
        seed: RNG seed.
        variance_convention: 'sd' reads 0.1 / 2.1 as standard deviations,
            'var' as variances.

    Returns:
        Dataset with mean and noise oracles attached.

    Raises:
        InvalidNError: If n < 8.
    """
    if int(n) != n or n < 8:
        raise InvalidNError(f"Bimodal DGP needs n >= 8, got {n}")
    outer_sd, middle_sd = noise_levels(variance_convention)
    rng = np.random.default_rng(seed)

    n_outer = int(math.floor(OUTER_FRACTION * n))
    n_middle = n - 2 * n_outer

    x = np.concatenate([
        rng.uniform(*OUTER_LEFT, size=n_outer),
        rng.uniform(*OUTER_RIGHT, size=n_outer),
        MIDDLE_SHIFT + MIDDLE_WIDTH * rng.beta(*MIDDLE_BETA, size=n_middle),
    ])
    sd = np.concatenate([np.full(2 * n_outer, outer_sd), np.full(n_middle, middle_sd)])
    y = bimodal_mean(x) + sd * rng.standard_normal(n)

    order = rng.permutation(n)

    def noise_sd_fn(X: np.ndarray) -> np.ndarray:
        return np.where(in_middle_region(X), middle_sd, outer_sd)

    return Dataset(
        features=x[order].reshape(-1, 1),
        target=y[order],
        column_names=["x"],
        provenance=f"bimodal(n={n}, seed={seed}, convention={variance_convention})",
        mean_fn=bimodal_mean,
        noise_sd_fn=noise_sd_fn,
    )


def circle_centers(k_classes: int, radius: float = 2.0) -> np.ndarray:
    """k evenly spaced points on a circle, shape (k, 2)."""
    angles = 2.0 * np.pi * np.arange(k_classes) / k_classes
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def blobs_posterior(X: np.ndarray, centers: np.ndarray, spread: float) -> np.ndarray:
    """True P(y | x) for isotropic Gaussian clusters with equal class weights."""
    X = np.asarray(X, dtype=float).reshape(-1, centers.shape[1])
    sq_dist = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return softmax(-sq_dist / (2.0 * spread ** 2), axis=1)


def generate_blobs_classification(
    n: int,
    k_classes: int,
    spread: float,
    seed: int,
    centers: Optional[np.ndarray] = None
) -> Dataset:
    """
    Gaussian-blob classification in 2-D with balanced classes.

    Args:
        n: Sample size, at least k_classes.
        k_classes: Number of classes.
        spread: Cluster standard deviation.
        seed: RNG seed.
        centers: Optional (k, 2) cluster centers; defaults to a circle of radius 2.

    Returns:
        Dataset with the true posterior attached as posterior_fn.

    Raises:
        InvalidNError: If n < k_classes.
    """
    if k_classes < 2:
        raise InvalidNError(f"Need at least 2 classes, got {k_classes}")
    if int(n) != n or n < k_classes:
        raise InvalidNError(f"Blobs need n >= k_classes ({k_classes}), got {n}")
    if spread <= 0:
        raise ValueError(f"Spread must be positive: {spread}")

    centers = circle_centers(k_classes) if centers is None else np.asarray(centers, dtype=float)
    if centers.shape != (k_classes, 2):
        raise ValueError(f"Centers must have shape ({k_classes}, 2), got {centers.shape}")

    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % k_classes)
    features = centers[labels] + spread * rng.standard_normal((n, 2))

    def posterior_fn(X: np.ndarray) -> np.ndarray:
        return blobs_posterior(X, centers, spread)

    return Dataset(
        features=features,
        target=labels,
        column_names=["x0", "x1"],
        provenance=f"blobs(n={n}, k={k_classes}, spread={spread:g}, seed={seed})",
        is_classification=True,
        n_classes=k_classes,
        target_name="label",
        posterior_fn=posterior_fn,
    )
