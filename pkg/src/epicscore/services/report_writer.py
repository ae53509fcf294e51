"""
Report output service.

Writes per-run metric reports and aggregate tables as canonical JSON or CSV,
reads them back, and dumps per-point bands for plotting.
"""

import json
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from epicscore.exceptions import ParseError
from epicscore.models.region import PredictionBand
from epicscore.models.reports import AggregateReport, MetricsReport, RunStatus
from epicscore.utils.logger import get_logger

logger = get_logger(__name__)

FORMATS = ("json", "csv")
CSV_FLOAT_FORMAT = "%.17g"


def _optional(cast: Callable[[str], Any]) -> Callable[[str], Any]:
    def convert(text: str) -> Any:
        return None if text == "" else cast(text)
    return convert


def _parse_bool(text: str) -> bool:
    if text not in ("True", "False"):
        raise ValueError(f"not a boolean: {text!r}")
    return text == "True"


# Column converters for MetricsReport CSV rows
_REPORT_COLUMNS: Dict[str, Callable[[str], Any]] = {
    "method": str,
    "dataset": str,
    "run_index": int,
    "seed": int,
    "alpha": float,
    "config_hash": str,
    "n_test": int,
    "amc": _optional(float),
    "aisl": _optional(float),
    "mean_il": _optional(float),
    "pearson_rho": _optional(float),
    "ssc": _optional(float),
    "mean_set_size": _optional(float),
    "n_degenerate": int,
    "n_cal2": _optional(int),
    "coverage_in_bounds": _optional(_parse_bool),
    "status": str,
    "error_message": _optional(str),
}


def canonical_json(data: Any) -> str:
    """Sorted-key, indented JSON with a trailing newline."""
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _write_text(path: Path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise OSError(f"Cannot write report to {path}: {e}") from e
    return path


def _write_frame(path: Path, frame: pd.DataFrame) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise OSError(f"Cannot write table to {path}: {e}") from e
    return path


def reports_to_dict(reports: Sequence[MetricsReport]) -> dict:
    """JSON document for a list of run reports."""
    hashes = sorted({r.config_hash for r in reports})
    return {
        "config_hash": hashes[0] if len(hashes) == 1 else None,
        "reports": [r.to_dict() for r in reports],
    }


def write_reports_json(reports: Sequence[MetricsReport], path: Path) -> Path:
    """Write run reports as canonical JSON."""
    return _write_text(path, canonical_json(reports_to_dict(reports)))


def write_reports_csv(reports: Sequence[MetricsReport], path: Path) -> Path:
    """Write run reports as one CSV row each."""
    frame = pd.DataFrame([r.to_dict() for r in reports], columns=list(_REPORT_COLUMNS))
    return _write_frame(path, frame)


def write_aggregate_json(report: AggregateReport, path: Path) -> Path:
    """Write an aggregate table as canonical JSON."""
    return _write_text(path, canonical_json(report.to_dict()))


def write_aggregate_csv(report: AggregateReport, path: Path) -> Path:
    """Write an aggregate table with mean / 2sd / bold columns per metric."""
    return _write_frame(path, pd.DataFrame(report.to_records()))


def emit(
    report: Union[AggregateReport, Sequence[MetricsReport]],
    fmt: str,
    path: Path
) -> Path:
    """
    Write run reports or an aggregate table in the requested format.

    Args:
        report: List of MetricsReport or an AggregateReport.
        fmt: 'json' or 'csv'.
        path: Destination file.

    Returns:
        The path written.
    """
    if fmt not in FORMATS:
        raise ValueError(f"Unknown report format '{fmt}' (expected one of {', '.join(FORMATS)})")
    if isinstance(report, AggregateReport):
        written = write_aggregate_json(report, path) if fmt == "json" else write_aggregate_csv(report, path)
    else:
        written = write_reports_json(report, path) if fmt == "json" else write_reports_csv(report, path)
    logger.info(f"Wrote {fmt.upper()} report to {written}")
    return written


def load_table_csv(path: Path) -> pd.DataFrame:
    """Read a CSV written by this module with every cell as text."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Report file not found: {path}")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"Cannot read {path}: {e}") from e


def _reports_from_csv(path: Path) -> List[MetricsReport]:
    frame = load_table_csv(path)
    missing = [c for c in _REPORT_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(f"{path}: missing report columns {', '.join(missing)}")
    reports = []
    for row_number, row in enumerate(frame.to_dict(orient="records"), start=1):
        values = {}
        for column, convert in _REPORT_COLUMNS.items():
            try:
                values[column] = convert(row[column])
            except ValueError as e:
                raise ParseError(
                    f"{path}: bad value {row[column]!r} in row {row_number}, column '{column}'",
                    row=row_number,
                    column=column,
                ) from e
        values["status"] = RunStatus(values["status"])
        reports.append(MetricsReport(**values))
    return reports


def load_reports(path: Path) -> List[MetricsReport]:
    """
    Read run reports from a JSON or CSV file written by emit.

    Raises:
        FileNotFoundError: If the file does not exist.
        ParseError: If the file is not a report file.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _reports_from_csv(path)
    if not path.exists():
        raise FileNotFoundError(f"Report file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return [MetricsReport.from_dict(item) for item in data["reports"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path} is not a run report file: {e}") from e


def write_band_dump(
    path: Path,
    features: np.ndarray,
    bands: PredictionBand,
    ys,
    column_names: Optional[Sequence[str]] = None
) -> Path:
    """
    Per-point band dump: feature columns, lo, hi, y, covered.

    Full-space bands are written with infinite ends.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features.reshape(-1, 1)
    ys = np.asarray(ys, dtype=float).reshape(-1)
    if features.shape[0] != len(bands) or ys.size != len(bands):
        raise ValueError(
            f"Band dump needs equal lengths: {features.shape[0]} rows, "
            f"{len(bands)} bands, {ys.size} targets"
        )
    names = list(column_names) if column_names else [f"x{j}" for j in range(features.shape[1])]
    frame = pd.DataFrame(features, columns=names)
    frame["lo"] = bands.lo
    frame["hi"] = bands.hi
    frame["y"] = ys
    frame["covered"] = bands.contains(ys).astype(int)
    return _write_frame(path, frame)
