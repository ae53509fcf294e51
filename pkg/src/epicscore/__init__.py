"""
EPICSCORE - Epistemic-uncertainty-aware conformal prediction

Turns any nonconformity score into one that accounts for epistemic
uncertainty through a Bayesian predictive CDF, and ships the split-conformal
baselines, metrics, data generators and experiment runner around it.
"""

__version__ = "1.0.1"
__license__ = "MIT"

from epicscore.models.calibration import CalibrationResult, CoverageBounds, NominalLevel
from epicscore.models.config import ExperimentConfig
from epicscore.models.dataset import Dataset, SplitIndices
from epicscore.models.region import PredictionBand, PredictionSet
from epicscore.models.reports import AggregateReport, MetricsReport

__all__ = [
    "NominalLevel",
    "CalibrationResult",
    "CoverageBounds",
    "ExperimentConfig",
    "Dataset",
    "SplitIndices",
    "PredictionBand",
    "PredictionSet",
    "MetricsReport",
    "AggregateReport",
]
