"""
Dataset management service.

Handles CSV ingestion, external-prediction files, the train / calibration /
test splitting protocol, and resolution of dataset specs for experiments.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from epicscore.exceptions import (
    InvalidNError,
    MissingColumnError,
    ParseError,
    RowCountMismatchError,
)
from epicscore.models.config import CalibrationSplitRule, DatasetSpec
from epicscore.models.dataset import Dataset, SplitIndices
from epicscore.services.data_generator import (
    generate_bimodal_dgp,
    generate_blobs_classification,
)
from epicscore.utils.logger import get_logger

logger = get_logger(__name__)

PREDICTION_COLUMNS = ("g", "q_lo", "q_hi")
_FLOOR_EPS = 1e-9


@dataclass
class ExternalPredictions:
    """Row-aligned predictions from an outside model."""

    g: Optional[np.ndarray] = None
    q_lo: Optional[np.ndarray] = None
    q_hi: Optional[np.ndarray] = None

    @property
    def columns(self) -> Tuple[str, ...]:
        return tuple(name for name in PREDICTION_COLUMNS if getattr(self, name) is not None)

    def __len__(self) -> int:
        for name in PREDICTION_COLUMNS:
            values = getattr(self, name)
            if values is not None:
                return int(values.size)
        return 0


# ----------------------------------------------------------------------------
# Splitting protocol
# ----------------------------------------------------------------------------

def split_dataset(
    data: Union[Dataset, int],
    ratios: Sequence[float] = (0.4, 0.4, 0.2),
    seed: int = 0,
    rule: Optional[CalibrationSplitRule] = None
) -> SplitIndices:
    """
    Uniform random train / calibration / test partition.

    Train and calibration sizes are floor(ratio * n); test gets the
    remainder. Without a rule the whole calibration set is in cal1; with a
    rule it is further split by split_calibration.

    Args:
        data: Dataset or its number of rows.
        ratios: (train, calibration, test) proportions summing to 1.
        seed: RNG seed.
        rule: Optional calibration split rule.

    Returns:
        SplitIndices.
    """
    n = data.n_samples if isinstance(data, Dataset) else int(data)
    if n < 1:
        raise InvalidNError(f"Cannot split {n} rows")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"Ratios must be three non-negative values summing to 1: {ratios}")

    n_train = int(math.floor(ratios[0] * n + _FLOOR_EPS))
    n_cal = min(int(math.floor(ratios[1] * n + _FLOOR_EPS)), n - n_train)

    order = np.random.default_rng(seed).permutation(n)
    train = np.sort(order[:n_train])
    calibration = np.sort(order[n_train:n_train + n_cal])
    test = np.sort(order[n_train + n_cal:])

    if rule is None:
        return SplitIndices(train, calibration, [], test, seed)
    cal1, cal2 = split_calibration(calibration, seed, rule)
    return SplitIndices(train, cal1, cal2, test, seed)


def calibration_reserve(m: int, rule: Optional[CalibrationSplitRule] = None) -> int:
    """|D_cal,2| for a calibration set of size m: round(0.3 m) up to 3000 points, else 1000."""
    rule = rule or CalibrationSplitRule()
    if m <= rule.cap_threshold:
        return int(math.floor(rule.cal2_fraction * m + 0.5))
    return min(rule.cap, m)


def split_calibration(
    cal_indices: Sequence[int],
    seed: int = 0,
    rule: Optional[CalibrationSplitRule] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Divide calibration indices into (cal1, cal2).

    Returns:
        (cal1, cal2) sorted index arrays.
    """
    cal = np.asarray(cal_indices, dtype=np.int64).reshape(-1)
    n2 = calibration_reserve(cal.size, rule)
    shuffled = np.random.default_rng(seed + 1).permutation(cal)
    return np.sort(shuffled[n2:]), np.sort(shuffled[:n2])


# ----------------------------------------------------------------------------
# CSV ingestion
# ----------------------------------------------------------------------------

def _read_table(path: Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"CSV file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise ParseError(f"{path} is empty") from e
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ParseError(f"Cannot read {path}: {e}") from e
    frame.columns = [str(c).strip() for c in frame.columns]
    return frame


def _numeric_column(frame: pd.DataFrame, column: str, path: Path) -> np.ndarray:
    raw = frame[column].str.strip()
    # astype(float) parses each cell with correct rounding; to_numeric does not
    try:
        values = raw.astype(float).to_numpy(dtype=float)
    except ValueError:
        values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise ParseError(
            f"{path}: cannot parse {raw.iloc[row]!r} in row {row + 1}, column '{column}'",
            row=row + 1,
            column=column,
        )
    return values


def load_csv(path: Path, target_column: str, label_mode: bool = False) -> Dataset:
    """
    Load a numeric CSV with a header row.

    Args:
        path: CSV file (UTF-8, comma-separated).
        target_column: Name of the target column; all others are features.
        label_mode: Read the target as integer labels.

    Returns:
        Validated Dataset.

    Raises:
        MissingColumnError: If the target column is absent.
        ParseError: If a cell is not a finite number (row is 1-based over data rows).
    """
    path = Path(path)
    frame = _read_table(path)
    if target_column not in frame.columns:
        raise MissingColumnError(f"{path}: missing target column '{target_column}'")
    feature_columns = [c for c in frame.columns if c != target_column]
    if not feature_columns:
        raise ParseError(f"{path}: no feature columns besides '{target_column}'")
    if len(frame) == 0:
        raise ParseError(f"{path}: no data rows")

    features = np.column_stack([_numeric_column(frame, c, path) for c in feature_columns])
    target = _numeric_column(frame, target_column, path)

    if label_mode:
        bad = (target != np.round(target)) | (target < 0)
        if np.any(bad):
            row = int(np.flatnonzero(bad)[0])
            raise ParseError(
                f"{path}: label {target[row]!r} in row {row + 1} is not a non-negative integer",
                row=row + 1,
                column=target_column,
            )
        target = target.astype(np.int64)

    dataset = Dataset(
        features=features,
        target=target,
        column_names=feature_columns,
        provenance=f"csv:{path.name}",
        is_classification=label_mode,
        target_name=target_column,
    )
    logger.info(f"Loaded {dataset}")
    return dataset


def load_predictions(path: Path, n_rows: Optional[int] = None) -> ExternalPredictions:
    """
    Load external predictions with any of the columns g, q_lo, q_hi.

    Args:
        path: Predictions CSV.
        n_rows: Row count of the dataset the predictions annotate.

    Raises:
        MissingColumnError: If none of g, q_lo, q_hi is present.
        RowCountMismatchError: If the row count differs from n_rows.
        ParseError: On non-numeric cells.
    """
    path = Path(path)
    frame = _read_table(path)
    present = [c for c in PREDICTION_COLUMNS if c in frame.columns]
    if not present:
        raise MissingColumnError(f"{path}: needs at least one of the columns g, q_lo, q_hi")
    if n_rows is not None and len(frame) != n_rows:
        raise RowCountMismatchError(
            f"{path}: {len(frame)} prediction rows but the dataset has {n_rows}"
        )
    return ExternalPredictions(**{c: _numeric_column(frame, c, path) for c in present})


def write_dataset_csv(dataset: Dataset, path: Path) -> Path:
    """Write features and target to a CSV readable by load_csv."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(dataset.features, columns=dataset.column_names)
    frame[dataset.target_name] = dataset.target
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Wrote {dataset.n_samples} rows to {path}")
    return path


class DatasetManager:
    """
    Resolves dataset specs into datasets for experiment runs.

    Synthetic datasets are regenerated per run seed; CSV datasets (and their
    external predictions) are loaded once and reused.
    """

    def __init__(self, spec: DatasetSpec, base_dir: Optional[Path] = None):
        """
        Initialize DatasetManager.

        Args:
            spec: Dataset source.
            base_dir: Directory relative CSV paths are resolved against.
        """
        self.spec = spec
        self.base_dir = Path(base_dir) if base_dir else None
        self._cached: Optional[Dataset] = None
        self._predictions: Optional[ExternalPredictions] = None

    def _resolve(self, name: str) -> Path:
        path = Path(name)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path

    def dataset(self, seed: int) -> Dataset:
        """Dataset for a run."""
        spec = self.spec
        if spec.kind == "bimodal":
            return generate_bimodal_dgp(spec.n, seed, spec.variance_convention)
        if spec.kind == "blobs":
            return generate_blobs_classification(spec.n, spec.k_classes, spec.spread, seed)
        if self._cached is None:
            self._cached = load_csv(self._resolve(spec.path), spec.target_column, spec.label_mode)
        return self._cached

    def predictions(self) -> Optional[ExternalPredictions]:
        """External predictions for CSV datasets that name a predictions file."""
        if self.spec.kind != "csv" or not self.spec.predictions_path:
            return None
        if self._predictions is None:
            n_rows = self.dataset(0).n_samples
            self._predictions = load_predictions(
                self._resolve(self.spec.predictions_path), n_rows=n_rows
            )
        return self._predictions

    def __repr__(self) -> str:
        return f"DatasetManager(dataset='{self.spec.label}', kind={self.spec.kind})"
