"""
Dataset data models.

Defines the validated feature/target container and the train / calibration /
test split indices.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np


@dataclass(eq=False)
class Dataset:
    """Feature matrix with a continuous target or integer labels."""
    
    features: np.ndarray          # (n, p)
    target: np.ndarray            # (n,) real, or integer labels 0..K-1
    column_names: List[str] = field(default_factory=list)
    provenance: str = "unknown"
    is_classification: bool = False
    n_classes: Optional[int] = None
    target_name: str = "y"
    # Oracle hooks for synthetic data (not serialized)
    posterior_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    noise_sd_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    mean_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    
    def __post_init__(self):
        """Validate shapes and values."""
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        if features.ndim != 2:
            raise ValueError(f"Features must be a 2-D matrix, got shape {features.shape}")
        
        n, p = features.shape
        if n < 1 or p < 1:
            raise ValueError(f"Dataset needs n >= 1 and p >= 1, got n={n}, p={p}")
        if not np.all(np.isfinite(features)):
            raise ValueError("Features contain NaN or infinite values")
        
        if self.is_classification:
            target = np.asarray(self.target)
            if target.shape != (n,):
                raise ValueError(f"Target must have shape ({n},), got {target.shape}")
            if not np.all(np.equal(np.mod(target, 1), 0)):
                raise ValueError("Labels must be integers")
            target = target.astype(np.int64)
            if target.min() < 0:
                raise ValueError(f"Labels must be non-negative: {target.min()}")
            inferred = int(target.max()) + 1
            if self.n_classes is None:
                self.n_classes = inferred
            elif self.n_classes < inferred:
                raise ValueError(
                    f"n_classes={self.n_classes} but labels go up to {inferred - 1}"
                )
        else:
            target = np.asarray(self.target, dtype=float)
            if target.shape != (n,):
                raise ValueError(f"Target must have shape ({n},), got {target.shape}")
            if not np.all(np.isfinite(target)):
                raise ValueError("Target contains NaN or infinite values")
        
        if not self.column_names:
            self.column_names = ["x"] if p == 1 else [f"x{j}" for j in range(p)]
        if len(self.column_names) != p:
            raise ValueError(
                f"Expected {p} column names, got {len(self.column_names)}"
            )
        
        self.features = features
        self.target = target
    
    @property
    def n_samples(self) -> int:
        """Number of rows."""
        return int(self.features.shape[0])
    
    @property
    def n_features(self) -> int:
        """Number of feature columns."""
        return int(self.features.shape[1])
    
    def subset(self, indices: np.ndarray) -> "Dataset":
        """Rows selected by index, keeping oracle hooks."""
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[indices],
            target=self.target[indices],
            column_names=list(self.column_names),
            provenance=self.provenance,
            is_classification=self.is_classification,
            n_classes=self.n_classes,
            target_name=self.target_name,
            posterior_fn=self.posterior_fn,
            noise_sd_fn=self.noise_sd_fn,
            mean_fn=self.mean_fn,
        )
    
    def __len__(self) -> int:
        return self.n_samples
    
    def __repr__(self) -> str:
        kind = f"classification, K={self.n_classes}" if self.is_classification else "regression"
        return (
            f"Dataset(n={self.n_samples}, p={self.n_features}, {kind}, "
            f"provenance='{self.provenance}')"
        )


def _as_index(values) -> np.ndarray:
    return np.asarray(values if values is not None else [], dtype=np.int64).reshape(-1)


@dataclass(frozen=True, eq=False)
class SplitIndices:
    """
    Disjoint train / calibration / test index sets.
    
    The calibration indices are the union of cal1 (fits the predictive model)
    and cal2 (calibrates the threshold); baselines use the whole calibration set.
    """
    
    train: np.ndarray
    cal1: np.ndarray
    cal2: np.ndarray
    test: np.ndarray
    seed: int
    
    def __post_init__(self):
        """Normalize to integer arrays and check disjointness."""
        for name in ("train", "cal1", "cal2", "test"):
            object.__setattr__(self, name, _as_index(getattr(self, name)))
        
        combined = np.concatenate([self.train, self.cal1, self.cal2, self.test])
        if combined.size and combined.min() < 0:
            raise ValueError("Split indices must be non-negative")
        if np.unique(combined).size != combined.size:
            raise ValueError("Split index sets must be pairwise disjoint")
    
    @property
    def calibration(self) -> np.ndarray:
        """All calibration indices (cal1 followed by cal2)."""
        return np.concatenate([self.cal1, self.cal2])
    
    @property
    def sizes(self) -> Tuple[int, int, int, int]:
        """(train, cal1, cal2, test) sizes."""
        return (self.train.size, self.cal1.size, self.cal2.size, self.test.size)
    
    def with_calibration_split(self, cal1: np.ndarray, cal2: np.ndarray) -> "SplitIndices":
        """Replace the calibration partition (cal1 + cal2 must equal the old union)."""
        old = np.sort(self.calibration)
        new = np.sort(np.concatenate([_as_index(cal1), _as_index(cal2)]))
        if not np.array_equal(old, new):
            raise ValueError("New calibration split must partition the same indices")
        return SplitIndices(self.train, cal1, cal2, self.test, self.seed)
    
    def __repr__(self) -> str:
        n_train, n_cal1, n_cal2, n_test = self.sizes
        return (
            f"SplitIndices(train={n_train}, cal1={n_cal1}, cal2={n_cal2}, "
            f"test={n_test}, seed={self.seed})"
        )
