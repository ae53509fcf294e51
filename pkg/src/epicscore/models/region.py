"""
Prediction region data models.

A PredictionBand holds one interval per test point (vectorized); a
PredictionSet holds the label set of a single test point.
"""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, Tuple

import numpy as np


@dataclass(frozen=True, eq=False)
class PredictionBand:
    """
    Per-point prediction intervals [lo, hi].
    
    Attributes:
        lo: Lower ends, shape (n,).
        hi: Upper ends, shape (n,).
        degenerate: True where the +inf threshold sentinel produced the
            whole target range.
        empty: True where a negative correction crossed the ends (the
            interval contains no point).
    """
    
    lo: np.ndarray
    hi: np.ndarray
    degenerate: np.ndarray = None
    empty: np.ndarray = None
    
    def __post_init__(self):
        """Normalize arrays and validate the lo <= hi invariant."""
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError(f"lo and hi must be 1-D arrays of equal length: {lo.shape} vs {hi.shape}")
        
        degenerate = (
            np.zeros(lo.shape, dtype=bool) if self.degenerate is None
            else np.broadcast_to(np.asarray(self.degenerate, dtype=bool), lo.shape).copy()
        )
        crossed = lo > hi
        empty = (
            crossed if self.empty is None
            else np.broadcast_to(np.asarray(self.empty, dtype=bool), lo.shape) | crossed
        )
        
        # Degenerate bands span everything
        lo = np.where(degenerate, -np.inf, lo)
        hi = np.where(degenerate, np.inf, hi)
        empty = empty & ~degenerate
        
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("Band ends must not be NaN")
        
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "degenerate", degenerate)
        object.__setattr__(self, "empty", np.asarray(empty, dtype=bool))
    
    @classmethod
    def full_space(cls, n: int) -> "PredictionBand":
        """Band covering the whole target range at n points."""
        return cls(
            lo=np.full(n, -np.inf),
            hi=np.full(n, np.inf),
            degenerate=np.ones(n, dtype=bool),
        )
    
    @property
    def widths(self) -> np.ndarray:
        """Interval lengths (0 for empty bands, inf for degenerate ones)."""
        return np.where(self.empty, 0.0, self.hi - self.lo)
    
    @property
    def midpoints(self) -> np.ndarray:
        """Interval centers."""
        return 0.5 * (self.lo + self.hi)
    
    def scoring_ends(self) -> Tuple[np.ndarray, np.ndarray]:
        """(lo, hi) with every empty band collapsed to its midpoint."""
        mid = self.midpoints
        return np.where(self.empty, mid, self.lo), np.where(self.empty, mid, self.hi)
    
    @property
    def n_degenerate(self) -> int:
        """Number of full-space bands."""
        return int(self.degenerate.sum())
    
    def contains(self, ys: np.ndarray) -> np.ndarray:
        """Boolean coverage indicator for each point."""
        ys = np.asarray(ys, dtype=float)
        return (~self.empty) & (self.lo <= ys) & (ys <= self.hi)
    
    def subset(self, mask: np.ndarray) -> "PredictionBand":
        """Select a subset of points."""
        return PredictionBand(
            lo=self.lo[mask],
            hi=self.hi[mask],
            degenerate=self.degenerate[mask],
            empty=self.empty[mask],
        )
    
    def __len__(self) -> int:
        return int(self.lo.shape[0])
    
    def __getitem__(self, index: int) -> Tuple[float, float]:
        return float(self.lo[index]), float(self.hi[index])
    
    def __iter__(self) -> Iterator[Tuple[float, float]]:
        for i in range(len(self)):
            yield self[i]
    
    def __repr__(self) -> str:
        return (
            f"PredictionBand(n={len(self)}, mean_width="
            f"{float(np.mean(self.widths)) if len(self) else 0.0:.4g}, "
            f"degenerate={self.n_degenerate})"
        )


@dataclass(frozen=True)
class PredictionSet:
    """Label set {y : s'(x, y) <= t} for a single test point."""
    
    labels: FrozenSet[int]
    scores: Dict[int, float] = field(default_factory=dict)  # per-label s' values
    
    def __post_init__(self):
        """Validate labels are a subset of the scored alphabet."""
        object.__setattr__(self, "labels", frozenset(int(y) for y in self.labels))
        if self.scores and not self.labels <= set(self.scores):
            raise ValueError("Set labels must be a subset of the scored labels")
    
    @property
    def size(self) -> int:
        """Set cardinality."""
        return len(self.labels)
    
    def contains(self, label: int) -> bool:
        """Check whether a label is in the set."""
        return int(label) in self.labels
    
    def __contains__(self, label: object) -> bool:
        return isinstance(label, (int, np.integer)) and self.contains(int(label))
    
    def __len__(self) -> int:
        return self.size
    
    def __str__(self) -> str:
        return "{" + ", ".join(str(y) for y in sorted(self.labels)) + "}"
