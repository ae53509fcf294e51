"""
Error taxonomy for epicscore.

Value-type errors also subclass the matching built-in so that callers catching
ValueError / RuntimeError keep working.
"""

from typing import Optional


class EpicScoreError(Exception):
    """Base class for all epicscore errors."""


class EmptyCalibrationError(EpicScoreError, ValueError):
    """Calibration scores are empty."""


class NonFiniteScoreError(EpicScoreError, ValueError):
    """A calibration score is NaN or infinite."""


class InvalidNError(EpicScoreError, ValueError):
    """A sample size argument is out of range."""


class InsufficientDataError(EpicScoreError, ValueError):
    """Too few samples to fit a model."""


class SingularKernelError(EpicScoreError, RuntimeError):
    """Cholesky factorization failed after jitter escalation."""


class SplitTooSmallError(EpicScoreError, ValueError):
    """A calibration sub-split has fewer points than required."""


class DegenerateBandError(EpicScoreError, ValueError):
    """A full-space (infinite) band was passed where a finite one is required."""


class InvalidTError(EpicScoreError, ValueError):
    """A CDF level lies outside its allowed range."""


class UnknownLabelError(EpicScoreError, ValueError):
    """A label lies outside the label alphabet."""


class NotAClassifierError(EpicScoreError, TypeError):
    """A label distribution was requested from a score (regression) model."""


class AlphabetMismatchError(EpicScoreError, ValueError):
    """Two probability vectors are defined over different label alphabets."""


class LengthMismatchError(EpicScoreError, ValueError):
    """Paired inputs have different lengths."""


class BinTooSmallError(EpicScoreError, ValueError):
    """Calibration data cannot fill even a single Mondrian bin."""


class ParseError(EpicScoreError, ValueError):
    """A CSV cell could not be parsed as a finite number."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class RowCountMismatchError(EpicScoreError, ValueError):
    """A predictions file does not align with its dataset."""


class MissingColumnError(EpicScoreError, KeyError):
    """A required CSV column is absent."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the plain message
        return str(self.args[0]) if self.args else ""


class ConfigError(EpicScoreError, ValueError):
    """Experiment configuration is invalid."""


class ReportMismatchError(EpicScoreError, ValueError):
    """Reports produced under different configurations cannot be aggregated."""


class ModelFormatError(EpicScoreError, ValueError):
    """A saved model file is malformed or has an unsupported version."""
