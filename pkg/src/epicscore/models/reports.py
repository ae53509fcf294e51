"""
Experiment report data models.

Per-run metric records and their aggregation into method x dataset tables.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

METRIC_NAMES = ("amc", "aisl", "mean_il", "pearson_rho", "ssc", "mean_set_size")


class RunStatus(Enum):
    """Outcome of a single method run."""

    SUCCESS = "success"
    FAILED = "failed"


@dataclass
class MetricsReport:
    """Metrics of one method on one seeded run."""

    method: str
    dataset: str
    run_index: int
    seed: int
    alpha: float
    config_hash: str
    n_test: int = 0
    amc: Optional[float] = None
    aisl: Optional[float] = None
    mean_il: Optional[float] = None
    pearson_rho: Optional[float] = None
    ssc: Optional[float] = None
    mean_set_size: Optional[float] = None
    n_degenerate: int = 0
    n_cal2: Optional[int] = None
    coverage_in_bounds: Optional[bool] = None
    status: RunStatus = RunStatus.SUCCESS
    error_message: Optional[str] = None

    def __post_init__(self):
        """Validate metric ranges."""
        if self.amc is not None and not 0.0 <= self.amc <= 1.0:
            raise ValueError(f"AMC must lie in [0, 1]: {self.amc}")
        if self.mean_il is not None and self.mean_il < 0:
            raise ValueError(f"Mean interval length must be >= 0: {self.mean_il}")
        if self.aisl is not None and self.mean_il is not None and self.aisl < self.mean_il - 1e-9:
            raise ValueError(f"AISL {self.aisl} is below the mean length {self.mean_il}")
        if self.pearson_rho is not None and not 0.0 <= self.pearson_rho <= 1.0:
            raise ValueError(f"|rho| must lie in [0, 1]: {self.pearson_rho}")

    @property
    def success(self) -> bool:
        """Check if the run produced metrics."""
        return self.status == RunStatus.SUCCESS

    @property
    def failed(self) -> bool:
        return self.status == RunStatus.FAILED

    def metric(self, name: str) -> Optional[float]:
        """Value of a metric by name."""
        if name not in METRIC_NAMES:
            raise KeyError(f"Unknown metric: {name}")
        return getattr(self, name)

    def mark_failed(self, error: str) -> None:
        """Record a failure; metrics are cleared."""
        self.status = RunStatus.FAILED
        self.error_message = error
        for name in METRIC_NAMES:
            setattr(self, name, None)
        self.coverage_in_bounds = None

    def to_dict(self) -> dict:
        """Convert to dictionary for JSON serialization."""
        return {
            "method": self.method,
            "dataset": self.dataset,
            "run_index": self.run_index,
            "seed": self.seed,
            "alpha": self.alpha,
            "config_hash": self.config_hash,
            "n_test": self.n_test,
            "amc": self.amc,
            "aisl": self.aisl,
            "mean_il": self.mean_il,
            "pearson_rho": self.pearson_rho,
            "ssc": self.ssc,
            "mean_set_size": self.mean_set_size,
            "n_degenerate": self.n_degenerate,
            "n_cal2": self.n_cal2,
            "coverage_in_bounds": self.coverage_in_bounds,
            "status": self.status.value,
            "error_message": self.error_message,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        """Rebuild from the output of to_dict."""
        values = dict(data)
        values["status"] = RunStatus(values.get("status", RunStatus.SUCCESS.value))
        known = set(cls.__dataclass_fields__)
        return cls(**{key: value for key, value in values.items() if key in known})

    def __str__(self) -> str:
        """String representation."""
        if self.failed:
            return f"✗ {self.method} run {self.run_index}: {self.error_message}"
        parts = [f"{name}={self.metric(name):.4g}" for name in METRIC_NAMES
                 if self.metric(name) is not None]
        return f"✓ {self.method} run {self.run_index}: " + ", ".join(parts)


@dataclass
class MetricCell:
    """Mean and two standard deviations of a metric over successful runs."""

    mean: Optional[float]
    two_sd: Optional[float]
    n: int
    bold: bool = False

    @property
    def half_width(self) -> float:
        """Half-width 2 sd / sqrt(n) of the cell's confidence interval."""
        if self.n < 1 or self.two_sd is None:
            return 0.0
        return self.two_sd / math.sqrt(self.n)

    @property
    def interval(self) -> Optional[tuple]:
        if self.mean is None:
            return None
        return (self.mean - self.half_width, self.mean + self.half_width)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "two_sd": self.two_sd, "n": self.n, "bold": self.bold}


@dataclass
class MethodSummary:
    """Aggregated metrics of one method on one dataset."""

    method: str
    dataset: str
    n_runs: int
    n_failed: int
    cells: Dict[str, MetricCell] = field(default_factory=dict)

    @property
    def single_run(self) -> bool:
        """Standard deviations are reported as 0 when only one run succeeded."""
        return self.n_runs == 1

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "dataset": self.dataset,
            "n_runs": self.n_runs,
            "n_failed": self.n_failed,
            "single_run": self.single_run,
            "metrics": {name: cell.to_dict() for name, cell in self.cells.items()},
        }


@dataclass
class AggregateReport:
    """Method x dataset table of aggregated metrics."""

    config_hash: str
    alpha: float
    rows: List[MethodSummary] = field(default_factory=list)

    def row(self, method: str, dataset: Optional[str] = None) -> MethodSummary:
        """Look up one row."""
        for summary in self.rows:
            if summary.method == method and (dataset is None or summary.dataset == dataset):
                return summary
        raise KeyError(f"No aggregated row for method '{method}'")

    def to_dict(self) -> dict:
        """Convert to dictionary for JSON serialization."""
        return {
            "config_hash": self.config_hash,
            "alpha": self.alpha,
            "rows": [summary.to_dict() for summary in self.rows],
        }

    def to_records(self) -> List[dict]:
        """Flat records, one per row, for tabular output."""
        records = []
        for summary in self.rows:
            record = {
                "method": summary.method,
                "dataset": summary.dataset,
                "n_runs": summary.n_runs,
                "n_failed": summary.n_failed,
            }
            for name, cell in summary.cells.items():
                record[f"{name}_mean"] = cell.mean
                record[f"{name}_2sd"] = cell.two_sd
                record[f"{name}_bold"] = cell.bold
            records.append(record)
        return records

    def to_summary_string(self) -> str:
        """Generate a human-readable table."""
        lines = ["=" * 72, f"Aggregate report (alpha={self.alpha:g}, config {self.config_hash[:12]})", "=" * 72]
        for summary in self.rows:
            cells = []
            for name in METRIC_NAMES:
                cell = summary.cells.get(name)
                if cell is None or cell.mean is None:
                    continue
                mark = "*" if cell.bold else " "
                cells.append(f"{name}={cell.mean:.4g} ({cell.two_sd:.2g}){mark}")
            failed = f" [{summary.n_failed} failed]" if summary.n_failed else ""
            lines.append(f"{summary.dataset:<12} {summary.method:<24} " + "  ".join(cells) + failed)
        lines.append("=" * 72)
        return "\n".join(lines)

    def __str__(self) -> str:
        return f"AggregateReport({len(self.rows)} rows, alpha={self.alpha:g})"
