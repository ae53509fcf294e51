"""
Calibration data models.

Defines the nominal level, the calibrated nonconformity threshold, and the
finite-sample coverage bounds of split conformal prediction.
"""

import math
from dataclasses import dataclass
from typing import Union


@dataclass(frozen=True)
class NominalLevel:
    """Miscoverage level alpha in (0, 1)."""
    
    alpha: float
    
    def __post_init__(self):
        """Validate nominal level."""
        if not isinstance(self.alpha, (int, float)) or isinstance(self.alpha, bool):
            raise ValueError(f"Alpha must be a real number: {self.alpha!r}")
        if not 0.0 < float(self.alpha) < 1.0:
            raise ValueError(f"Alpha must be strictly between 0 and 1: {self.alpha}")
    
    @property
    def confidence(self) -> float:
        """Target coverage 1 - alpha."""
        return 1.0 - self.alpha
    
    @classmethod
    def of(cls, value: Union["NominalLevel", float]) -> "NominalLevel":
        """Coerce a float or NominalLevel into a validated NominalLevel."""
        if isinstance(value, NominalLevel):
            return value
        return cls(float(value))
    
    def __float__(self) -> float:
        return float(self.alpha)
    
    def __str__(self) -> str:
        return f"alpha={self.alpha:g}"


@dataclass(frozen=True)
class CalibrationResult:
    """Calibrated threshold t_(1-alpha) with its calibration metadata."""
    
    threshold: float  # score units; +inf when the order-statistic index exceeds n_cal
    n_cal: int
    score_id: str
    alpha: NominalLevel
    
    def __post_init__(self):
        """Validate calibration result."""
        if self.n_cal < 1:
            raise ValueError(f"Calibration size must be >= 1: {self.n_cal}")
        if math.isnan(self.threshold) or self.threshold == -math.inf:
            raise ValueError(f"Threshold must be finite or +inf: {self.threshold}")
        if not isinstance(self.alpha, NominalLevel):
            object.__setattr__(self, "alpha", NominalLevel.of(self.alpha))
    
    @property
    def is_infinite(self) -> bool:
        """True when the threshold is the +inf sentinel (full-space regions)."""
        return math.isinf(self.threshold)
    
    def to_dict(self) -> dict:
        """Convert to dictionary for JSON serialization."""
        return {
            "threshold": None if self.is_infinite else self.threshold,
            "infinite": self.is_infinite,
            "n_cal": self.n_cal,
            "score_id": self.score_id,
            "alpha": self.alpha.alpha,
        }
    
    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationResult":
        """Rebuild from the output of to_dict."""
        threshold = math.inf if data.get("infinite") else float(data["threshold"])
        return cls(
            threshold=threshold,
            n_cal=int(data["n_cal"]),
            score_id=str(data["score_id"]),
            alpha=NominalLevel(float(data["alpha"])),
        )
    
    def __str__(self) -> str:
        return (
            f"CalibrationResult({self.score_id}: t={self.threshold:.6g}, "
            f"n_cal={self.n_cal}, {self.alpha})"
        )


@dataclass(frozen=True)
class CoverageBounds:
    """Marginal coverage bounds [1 - alpha, 1 - alpha + 1/(1 + n2)]."""
    
    lower: float
    upper: float  # unclamped
    n2: int
    clamped: bool
    
    def __post_init__(self):
        """Validate bounds."""
        if self.n2 < 1:
            raise ValueError(f"n2 must be >= 1: {self.n2}")
        if self.lower > self.upper:
            raise ValueError(f"Lower bound {self.lower} exceeds upper bound {self.upper}")
    
    @property
    def upper_clamped(self) -> float:
        """Upper bound capped at 1."""
        return min(self.upper, 1.0)
    
    def contains(self, coverage: float) -> bool:
        """Check whether a coverage value lies inside the (clamped) bounds."""
        return self.lower <= coverage <= self.upper_clamped
    
    def to_dict(self) -> dict:
        """Convert to dictionary for JSON serialization."""
        return {
            "lower": self.lower,
            "upper": self.upper,
            "upper_clamped": self.upper_clamped,
            "n2": self.n2,
            "clamped": self.clamped,
        }
