"""
Experiment orchestrator.

Runs every configured method over seeded train / calibration / test splits,
evaluates the resulting regions, and aggregates per-run metrics into
method x dataset tables.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from epicscore.exceptions import ReportMismatchError
from epicscore.models.calibration import NominalLevel
from epicscore.models.config import (
    METHOD_NAMES,
    ExperimentConfig,
    PredictiveKind,
    PredictorConfig,
    PredictorKind,
)
from epicscore.models.dataset import Dataset, SplitIndices
from epicscore.models.region import PredictionBand, PredictionSet
from epicscore.models.reports import (
    METRIC_NAMES,
    AggregateReport,
    MethodSummary,
    MetricCell,
    MetricsReport,
)
from epicscore.services.baselines import (
    cqr_interval,
    cqr_r_interval,
    mondrian_calibrate,
    mondrian_interval,
    reg_split_interval,
    score_sets,
    weighted_interval,
)
from epicscore.services.config_manager import config_hash, worker_count
from epicscore.services.conformal import calibrate, coverage_bounds, coverage_within_bounds
from epicscore.services.dataset_manager import DatasetManager, split_dataset
from epicscore.services.epic import (
    EpicPipeline,
    epic_calibrate,
    epic_interval_cqr,
    epic_interval_regression,
    epic_sets,
)
from epicscore.services.metrics import evaluate
from epicscore.services.scores import (
    ExternalPredictor,
    Predictor,
    QuantileBand,
    ScoreFunction,
    ScoreKind,
    fit_base_predictor,
    fit_mad_predictor,
    fit_quantile_band,
)
from epicscore.utils.logger import get_logger, run_context

logger = get_logger(__name__)

Regions = Union[PredictionBand, List[PredictionSet]]

PREDICTIVE_SUFFIXES = {
    "gp": PredictiveKind.GP_EXACT,
    "mdn": PredictiveKind.MDN_DROPOUT,
    "bart": PredictiveKind.BART_LITE,
    "knn": PredictiveKind.KNN_EMPIRICAL,
}

# Lower is better unless listed here
_MAXIMIZED = {"ssc"}


@dataclass
class MethodOutcome:
    """Regions produced by one method on one run."""

    method: str
    regions: Optional[Regions] = None
    n_cal2: Optional[int] = None
    pipeline: Optional[EpicPipeline] = None
    error: Optional[str] = None

    @property
    def success(self) -> bool:
        return self.error is None


def predictive_config(config: ExperimentConfig, kind: PredictiveKind):
    """Kind-specific predictive configuration from the experiment config."""
    return {
        PredictiveKind.GP_EXACT: config.gp,
        PredictiveKind.MDN_DROPOUT: config.mdn,
        PredictiveKind.BART_LITE: config.bart,
        PredictiveKind.KNN_EMPIRICAL: config.knn_empirical,
    }[kind]


class ExperimentRun:
    """
    One seeded run: a data split plus the base models shared by its methods.

    Base models are fitted lazily on the training split and reused by every
    method of the run.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        run_index: int,
        seed: int,
        base_dir: Optional[Path] = None
    ):
        """
        Initialize ExperimentRun.

        Args:
            config: Validated experiment configuration.
            run_index: Position of the run in the experiment.
            seed: Pre-assigned seed of the run.
            base_dir: Directory relative dataset paths are resolved against.
        """
        self.config = config
        self.run_index = run_index
        self.seed = seed
        self.alpha = NominalLevel(config.alpha)

        manager = DatasetManager(config.dataset, base_dir=base_dir)
        self.data: Dataset = manager.dataset(seed)
        self.predictions = manager.predictions()
        self.split: SplitIndices = split_dataset(self.data, config.split_ratios, seed)
        self.train = self.data.subset(self.split.train)
        self.calibration = self.data.subset(self.split.calibration)
        self.test = self.data.subset(self.split.test)
        self._cache: Dict[str, object] = {}

    # ------------------------------------------------------------------
    # Shared base models
    # ------------------------------------------------------------------

    def _external(self, column: str) -> Optional[ExternalPredictor]:
        values = getattr(self.predictions, column, None) if self.predictions else None
        if values is None:
            return None
        return ExternalPredictor(self.data.features, values)

    def point_predictor(self) -> Predictor:
        """g(x): external predictions when supplied, else the configured base model."""
        if "g" not in self._cache:
            external = self._external("g")
            self._cache["g"] = external or fit_base_predictor(
                self.config.base_model, self.train.features, self.train.target, self.seed
            )
        return self._cache["g"]

    def mad_predictor(self) -> Predictor:
        """Regressor of absolute training residuals, same family as g."""
        if "mad" not in self._cache:
            self._cache["mad"] = fit_mad_predictor(
                self.config.base_model, self.point_predictor(),
                self.train.features, self.train.target, self.seed
            )
        return self._cache["mad"]

    def difficulty_predictor(self) -> Predictor:
        """k-NN conditional MAD of residuals, the Mondrian taxonomy statistic."""
        if "difficulty" not in self._cache:
            knn = PredictorConfig(
                kind=PredictorKind.KNN_MEAN, n_neighbors=self.config.base_model.n_neighbors
            )
            self._cache["difficulty"] = fit_mad_predictor(
                knn, self.point_predictor(), self.train.features, self.train.target, self.seed
            )
        return self._cache["difficulty"]

    def quantile_band(self) -> QuantileBand:
        """(q_lo, q_hi) at the configured quantile levels."""
        if "band" not in self._cache:
            lower, upper = self._external("q_lo"), self._external("q_hi")
            if lower is not None and upper is not None:
                band = QuantileBand(lower=lower, upper=upper)
            else:
                band = fit_quantile_band(
                    self.config.quantile_model, self.train.features, self.train.target,
                    self.config.quantile_levels(), self.seed
                )
            self._cache["band"] = band
        return self._cache["band"]

    def classifier(self) -> Predictor:
        """k-NN label-frequency classifier."""
        if "classifier" not in self._cache:
            clf_config = PredictorConfig(
                kind=PredictorKind.KNN_PROBA, n_neighbors=self.config.base_model.n_neighbors
            )
            n_classes = self.data.n_classes or int(np.max(self.data.target)) + 1
            self._cache["classifier"] = fit_base_predictor(
                clf_config, self.train.features, self.train.target, self.seed, n_classes=n_classes
            )
        return self._cache["classifier"]

    # ------------------------------------------------------------------
    # Methods
    # ------------------------------------------------------------------

    def _calibrate_baseline(self, score: ScoreFunction):
        cal = self.calibration
        return calibrate(score(cal.features, cal.target), self.alpha, score.score_id)

    def _epic(self, score: ScoreFunction, kind: PredictiveKind, continuous: bool = False) -> EpicPipeline:
        return epic_calibrate(
            score, kind, self.calibration, self.alpha,
            split_rule=self.config.calibration_split,
            seed=self.seed,
            predictive_config=predictive_config(self.config, kind),
            continuous=continuous,
        )

    def run_method(self, method: str) -> MethodOutcome:
        """Calibrate one method and build its regions on the test split."""
        X_test = self.test.features
        n_cal = self.calibration.n_samples

        if method == "reg_split":
            score = ScoreFunction(ScoreKind.RESIDUAL, predictor=self.point_predictor())
            result = self._calibrate_baseline(score)
            return MethodOutcome(method, reg_split_interval(score.predictor, result, X_test), n_cal)

        if method == "weighted":
            score = ScoreFunction(
                ScoreKind.WEIGHTED_RESIDUAL, predictor=self.point_predictor(), mad=self.mad_predictor()
            )
            result = self._calibrate_baseline(score)
            bands = weighted_interval(score.predictor, score.mad, result, X_test, score.floor)
            return MethodOutcome(method, bands, n_cal)

        if method == "mondrian":
            score = ScoreFunction(ScoreKind.RESIDUAL, predictor=self.point_predictor())
            cal = self.calibration
            bins = mondrian_calibrate(
                self.difficulty_predictor(), cal.features, score(cal.features, cal.target),
                self.alpha, n_bins=self.config.mondrian_bins
            )
            bands = mondrian_interval(score.predictor, bins, X_test)
            return MethodOutcome(method, bands, int(np.min(bins.counts)))

        if method in ("cqr", "cqr_r"):
            kind = ScoreKind.CQR if method == "cqr" else ScoreKind.CQR_R
            score = ScoreFunction(kind, quantiles=self.quantile_band())
            result = self._calibrate_baseline(score)
            q_lo, q_hi = score.quantile_predictions(X_test)
            build = cqr_interval if method == "cqr" else cqr_r_interval
            return MethodOutcome(method, build(q_lo, q_hi, result), n_cal)

        if method.startswith("epic_cqr_"):
            kind = PREDICTIVE_SUFFIXES[method.rsplit("_", 1)[-1]]
            pipeline = self._epic(ScoreFunction(ScoreKind.CQR, quantiles=self.quantile_band()), kind)
            return MethodOutcome(method, epic_interval_cqr(pipeline, X_test), pipeline.n_cal2, pipeline)

        if method == "aps":
            score = ScoreFunction(ScoreKind.APS, predictor=self.classifier())
            result = self._calibrate_baseline(score)
            return MethodOutcome(method, score_sets(score.label_scores(X_test), result), n_cal)

        if method.startswith("epic_aps_"):
            kind = PREDICTIVE_SUFFIXES[method.rsplit("_", 1)[-1]]
            continuous = "_continuous_" in method
            pipeline = self._epic(ScoreFunction(ScoreKind.APS, predictor=self.classifier()), kind, continuous)
            return MethodOutcome(method, epic_sets(pipeline, X_test), pipeline.n_cal2, pipeline)

        if method.startswith("epic_"):
            kind = PREDICTIVE_SUFFIXES[method.rsplit("_", 1)[-1]]
            pipeline = self._epic(ScoreFunction(ScoreKind.RESIDUAL, predictor=self.point_predictor()), kind)
            return MethodOutcome(method, epic_interval_regression(pipeline, X_test), pipeline.n_cal2, pipeline)

        raise ValueError(f"Unknown method: {method}")

    def execute(self, methods: Optional[Sequence[str]] = None) -> List[MethodOutcome]:
        """Run methods in order; a failing method does not stop the others."""
        outcomes = []
        for method in methods or self.config.methods:
            try:
                outcomes.append(self.run_method(method))
            except Exception as e:
                logger.warning(f"Run {self.run_index} (seed {self.seed}): {method} failed: {e}")
                logger.debug(f"{method} traceback", exc_info=True)
                outcomes.append(MethodOutcome(method, error=f"{type(e).__name__}: {e}"))
        return outcomes

    def report(self, outcome: MethodOutcome, digest: str) -> MetricsReport:
        """Evaluate an outcome on the test split."""
        report = MetricsReport(
            method=outcome.method,
            dataset=self.config.dataset.label,
            run_index=self.run_index,
            seed=self.seed,
            alpha=self.config.alpha,
            config_hash=digest,
            n_test=self.test.n_samples,
        )
        if not outcome.success:
            report.mark_failed(outcome.error)
            return report

        try:
            metrics = evaluate(outcome.regions, self.test.target, self.alpha, self.config.ssc_bins)
            for name in METRIC_NAMES:
                setattr(report, name, metrics[name])
            report.n_degenerate = int(metrics["n_degenerate"])
            report.n_cal2 = outcome.n_cal2
            if outcome.n_cal2:
                report.coverage_in_bounds = coverage_within_bounds(
                    report.amc, report.n_test, coverage_bounds(outcome.n_cal2, self.alpha)
                )
        except Exception as e:
            logger.warning(f"Run {self.run_index}: evaluating {outcome.method} failed: {e}")
            report.mark_failed(f"{type(e).__name__}: {e}")
        return report


def _run_one(
    config: ExperimentConfig,
    run_index: int,
    seed: int,
    base_dir: Optional[Path],
    digest: str
) -> List[MetricsReport]:
    """Worker entry point: one run with single-threaded numerics."""
    torch.set_num_threads(1)
    with threadpool_limits(limits=1), run_context(run_index, seed):
        try:
            run = ExperimentRun(config, run_index, seed, base_dir)
        except Exception as e:
            logger.warning(f"Run {run_index} (seed {seed}) could not be prepared: {e}")
            failed = []
            for method in config.methods:
                report = MetricsReport(
                    method=method, dataset=config.dataset.label, run_index=run_index,
                    seed=seed, alpha=config.alpha, config_hash=digest,
                )
                report.mark_failed(f"{type(e).__name__}: {e}")
                failed.append(report)
            return failed

        reports = [run.report(outcome, digest) for outcome in run.execute()]
    ok = sum(r.success for r in reports)
    logger.info(f"Run {run_index + 1}/{config.n_runs} (seed {seed}): {ok}/{len(reports)} methods ok")
    return reports


def run_experiment(
    config: ExperimentConfig,
    n_jobs: Optional[int] = None,
    base_dir: Optional[Path] = None
) -> List[MetricsReport]:
    """
    Execute all runs of an experiment.

    Runs are independent, seeded in advance, and merged in run order, so the
    result does not depend on the worker count.

    Args:
        config: Validated experiment configuration.
        n_jobs: Worker processes; defaults to EPIC_THREADS or the CPU count.
        base_dir: Directory relative dataset paths are resolved against.

    Returns:
        One MetricsReport per (run, method), ordered by run then method.
    """
    digest = config_hash(config)
    seeds = config.run_seeds()
    workers = worker_count(len(seeds), n_jobs)
    logger.info(
        f"Running '{config.name}': {len(seeds)} runs x {len(config.methods)} methods "
        f"on {workers} worker(s)"
    )

    if workers == 1:
        per_run = [_run_one(config, i, seed, base_dir, digest) for i, seed in enumerate(seeds)]
    else:
        per_run = Parallel(n_jobs=workers)(
            delayed(_run_one)(config, i, seed, base_dir, digest) for i, seed in enumerate(seeds)
        )

    reports = [report for run_reports in per_run for report in run_reports]
    n_failed = sum(r.failed for r in reports)
    if n_failed:
        logger.warning(f"{n_failed} of {len(reports)} method runs failed")
    return reports


# ----------------------------------------------------------------------------
# Aggregation
# ----------------------------------------------------------------------------

def _cell(values: List[float]) -> MetricCell:
    if not values:
        return MetricCell(mean=None, two_sd=None, n=0)
    sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return MetricCell(mean=float(np.mean(values)), two_sd=2.0 * sd, n=len(values))


def _badness(name: str, mean: float, alpha: float) -> float:
    if name == "amc":
        return abs(mean - (1.0 - alpha))
    if name in _MAXIMIZED:
        return -mean
    return mean


def _mark_bold(rows: List[MethodSummary], name: str, alpha: float) -> None:
    cells = [row.cells[name] for row in rows if name in row.cells and row.cells[name].mean is not None]
    if not cells:
        return
    # Overlap with the best interval, measured on a lower-is-better axis
    best = min(cells, key=lambda cell: _badness(name, cell.mean, alpha))
    reach = _badness(name, best.mean, alpha) + best.half_width
    for cell in cells:
        cell.bold = _badness(name, cell.mean, alpha) - cell.half_width <= reach


def _method_order(method: str) -> int:
    return METHOD_NAMES.index(method) if method in METHOD_NAMES else len(METHOD_NAMES)


def aggregate(reports: Sequence[MetricsReport]) -> AggregateReport:
    """
    Mean and two standard deviations of every metric per method x dataset.

    Failed runs are counted but left out. A method is bold for a metric when
    its mean +/- 2 sd / sqrt(runs) interval overlaps the best method's.

    Raises:
        ValueError: If there are no reports.
        ReportMismatchError: If reports come from different configs.
    """
    if not reports:
        raise ValueError("No reports to aggregate")
    hashes = sorted({r.config_hash for r in reports})
    if len(hashes) > 1:
        raise ReportMismatchError(
            f"Reports come from {len(hashes)} different configs: "
            + ", ".join(h[:12] for h in hashes)
        )
    alphas = {r.alpha for r in reports}
    if len(alphas) > 1:
        raise ReportMismatchError(f"Reports mix alpha levels: {sorted(alphas)}")
    alpha = alphas.pop()

    groups: Dict[tuple, List[MetricsReport]] = {}
    for report in reports:
        groups.setdefault((report.dataset, report.method), []).append(report)

    applicable = [
        name for name in METRIC_NAMES
        if any(r.success and r.metric(name) is not None for r in reports)
    ]

    rows = []
    for dataset, method in sorted(groups, key=lambda key: (key[0], _method_order(key[1]), key[1])):
        group = groups[(dataset, method)]
        ok = [r for r in group if r.success]
        rows.append(MethodSummary(
            method=method,
            dataset=dataset,
            n_runs=len(ok),
            n_failed=len(group) - len(ok),
            cells={
                name: _cell([r.metric(name) for r in ok if r.metric(name) is not None])
                for name in applicable
            },
        ))

    for dataset in sorted({row.dataset for row in rows}):
        dataset_rows = [row for row in rows if row.dataset == dataset]
        for name in applicable:
            _mark_bold(dataset_rows, name, alpha)

    return AggregateReport(config_hash=hashes[0], alpha=alpha, rows=rows)
