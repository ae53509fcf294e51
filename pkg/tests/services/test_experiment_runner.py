"""
Tests for the experiment runner and report aggregation.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from epicscore.exceptions import ReportMismatchError
from epicscore.models.config import ExperimentConfig
from epicscore.services.config_manager import config_hash
from epicscore.services.experiment_runner import (
    ExperimentRun,
    aggregate,
    run_experiment,
)
from epicscore.utils.logger import setup_logging


@pytest.fixture
def run_log(tmp_path):
    """Log the package to a file; returns a reader for its lines."""
    log_file = tmp_path / "run.log"
    logger = setup_logging(log_file=log_file, console_output=False)

    def read():
        for handler in logger.handlers:
            handler.flush()
        return log_file.read_text(encoding="utf-8").splitlines()

    yield read
    for handler in list(logger.handlers):
        handler.close()
    logger.handlers = []


@pytest.mark.integration
class TestRunExperiment:
    """Test run_experiment."""

    def test_reports_per_run_and_method(self, quick_config):
        """Test one successful report per (run, method), in order."""
        reports = run_experiment(quick_config, n_jobs=1)
        assert [(r.run_index, r.method) for r in reports] == [
            (run, method) for run in range(2) for method in quick_config.methods
        ]
        assert all(r.success for r in reports)
        assert {r.seed for r in reports} == {3, 4}
        assert {r.config_hash for r in reports} == {config_hash(quick_config)}
        for report in reports:
            assert report.n_test == 80
            assert 0.6 <= report.amc <= 1.0
            assert report.aisl >= report.mean_il > 0

    def test_epic_reports_threshold_size(self, quick_config):
        """Test EPICSCORE reports carry the D_cal,2 size and a bound check."""
        reports = run_experiment(quick_config, n_jobs=1)
        epic = [r for r in reports if r.method == "epic_knn"]
        assert all(r.n_cal2 == 48 for r in epic)
        assert all(r.coverage_in_bounds is not None for r in epic)

    def test_classification(self, quick_classification_config):
        """Test label-set methods report set metrics."""
        reports = run_experiment(quick_classification_config, n_jobs=1)
        assert len(reports) == 4
        for report in reports:
            assert report.success
            assert report.mean_set_size > 0
            assert report.ssc is not None
            assert report.aisl is None

    def test_failure_is_recorded(self, quick_config, mocker):
        """Test a failing method is marked failed without stopping the others."""
        mocker.patch(
            "epicscore.services.experiment_runner.epic_interval_regression",
            side_effect=RuntimeError("boom"),
        )
        reports = run_experiment(quick_config, n_jobs=1)
        failed = [r for r in reports if r.failed]
        assert {r.method for r in failed} == {"epic_knn"}
        assert failed[0].error_message == "RuntimeError: boom"
        assert all(r.success for r in reports if r.method != "epic_knn")

    def test_unpreparable_run(self, tmp_path):
        """Test a missing dataset fails every method of the run."""
        config = ExperimentConfig(
            dataset={"kind": "csv", "path": "missing.csv", "target_column": "y"},
            methods=["reg_split", "weighted"],
            n_runs=1,
        )
        reports = run_experiment(config, n_jobs=1, base_dir=tmp_path)
        assert [r.method for r in reports] == ["reg_split", "weighted"]
        assert all(r.failed and "FileNotFoundError" in r.error_message for r in reports)

    def test_run_logs_are_tagged(self, tmp_path, run_log):
        """Test lines emitted inside a run carry its index and seed."""
        config = ExperimentConfig(
            dataset={"kind": "csv", "path": "missing.csv", "target_column": "y"},
            methods=["reg_split"],
            n_runs=2,
            seed=5,
        )
        run_experiment(config, n_jobs=1, base_dir=tmp_path)
        lines = run_log()
        prepared = [line for line in lines if "could not be prepared" in line]
        assert len(prepared) == 2
        assert "[run 0 seed 5] Run 0 (seed 5)" in prepared[0]
        assert "[run 1 seed 6] Run 1 (seed 6)" in prepared[1]
        header = next(line for line in lines if "Running 'experiment'" in line)
        assert "[run" not in header

    def test_unknown_method_rejected_up_front(self):
        """Test unknown methods fail validation before any computation."""
        with pytest.raises(ValidationError, match="Unknown method"):
            ExperimentConfig(methods=["reg_split", "bogus"])

    def test_deterministic(self, quick_config):
        """Test equal configs give identical reports."""
        single = quick_config.model_copy(update={"n_runs": 1})
        first = [r.to_dict() for r in run_experiment(single, n_jobs=1)]
        second = [r.to_dict() for r in run_experiment(single, n_jobs=1)]
        assert first == second

    @pytest.mark.slow
    def test_worker_count_does_not_change_reports(self, quick_config):
        """Test serial and parallel runs agree exactly."""
        serial = [r.to_dict() for r in run_experiment(quick_config, n_jobs=1)]
        parallel = [r.to_dict() for r in run_experiment(quick_config, n_jobs=2)]
        assert serial == parallel

    @pytest.mark.slow
    def test_marginal_coverage_with_gp(self):
        """Test reg_split and epic_gp cover near 1 - alpha on the bimodal problem."""
        config = ExperimentConfig(
            dataset={"kind": "bimodal", "n": 2000},
            methods=["reg_split", "epic_gp"],
            n_runs=2,
            seed=11,
        )
        reports = run_experiment(config, n_jobs=1)
        assert len(reports) == 4
        for report in reports:
            assert report.success
            assert 0.85 <= report.amc <= 0.97


@pytest.mark.integration
class TestExperimentRun:
    """Test a single seeded run."""

    def test_split_sizes(self, quick_config):
        """Test the 40 / 40 / 20 split."""
        run = ExperimentRun(quick_config, 0, 3)
        assert (run.train.n_samples, run.calibration.n_samples, run.test.n_samples) == (160, 160, 80)

    def test_base_models_are_shared(self, quick_config):
        """Test methods of a run reuse the fitted base predictor."""
        run = ExperimentRun(quick_config, 0, 3)
        assert run.point_predictor() is run.point_predictor()

    def test_mondrian_and_cqr(self, quick_config):
        """Test the remaining regression baselines build one band per test point."""
        run = ExperimentRun(quick_config, 0, 3)
        for method in ("mondrian", "cqr", "cqr_r"):
            outcome = run.run_method(method)
            assert outcome.success
            assert len(outcome.regions) == run.test.n_samples
            assert not np.any(np.isnan(outcome.regions.lo))

    def test_unknown_method(self, quick_config):
        """Test run_method rejects unregistered names."""
        with pytest.raises(ValueError, match="Unknown method"):
            ExperimentRun(quick_config, 0, 3).run_method("nope")


@pytest.mark.unit
class TestAggregate:
    """Test aggregate."""

    def test_identical_reports(self, make_report):
        """Test identical methods have zero sd and are all bold."""
        reports = [make_report(method, i) for method in ("reg_split", "weighted") for i in range(3)]
        table = aggregate(reports)
        for method in ("reg_split", "weighted"):
            row = table.row(method)
            assert row.n_runs == 3 and not row.single_run
            for cell in row.cells.values():
                assert cell.two_sd == 0.0
                assert cell.bold

    def test_clearly_better_method(self, make_report):
        """Test means 1.0 and 2.0 with zero spread bold only the first."""
        reports = [make_report("reg_split", i, mean_il=1.0, aisl=5.0) for i in range(3)]
        reports += [make_report("weighted", i, mean_il=2.0, aisl=5.0) for i in range(3)]
        table = aggregate(reports)
        assert table.row("reg_split").cells["mean_il"].bold
        assert not table.row("weighted").cells["mean_il"].bold

    def test_overlapping_intervals_share_bold(self, make_report):
        """Test a method within the best interval is also bold."""
        reports = [make_report("reg_split", i, mean_il=v, aisl=5.0) for i, v in enumerate([1.0, 3.0])]
        reports += [make_report("weighted", i, mean_il=2.2, aisl=5.0) for i in range(2)]
        table = aggregate(reports)
        assert table.row("reg_split").cells["mean_il"].bold
        assert table.row("weighted").cells["mean_il"].bold

    def test_coverage_closest_to_target(self, make_report):
        """Test AMC bolding rewards closeness to 1 - alpha."""
        reports = [make_report("reg_split", i, amc=0.9) for i in range(2)]
        reports += [make_report("weighted", i, amc=0.99) for i in range(2)]
        table = aggregate(reports)
        assert table.row("reg_split").cells["amc"].bold
        assert not table.row("weighted").cells["amc"].bold

    def test_ssc_higher_is_better(self, make_report):
        """Test SSC bolding rewards larger values."""
        reports = [make_report("aps", i, ssc=0.8) for i in range(2)]
        reports += [make_report("epic_aps_knn", i, ssc=0.5) for i in range(2)]
        table = aggregate(reports)
        assert table.row("aps").cells["ssc"].bold
        assert not table.row("epic_aps_knn").cells["ssc"].bold

    def test_single_run(self, make_report):
        """Test one run reports sd 0 with the single-run flag."""
        row = aggregate([make_report()]).row("reg_split")
        assert row.single_run
        assert row.cells["amc"].two_sd == 0.0

    def test_sd_uses_sample_estimate(self, make_report):
        """Test 2 sd with one degree of freedom removed."""
        reports = [make_report("reg_split", i, amc=v) for i, v in enumerate([0.875, 0.9375])]
        cell = aggregate(reports).row("reg_split").cells["amc"]
        assert cell.mean == pytest.approx(0.90625)
        assert cell.two_sd == pytest.approx(2 * np.std([0.875, 0.9375], ddof=1))

    def test_failed_runs_counted_not_averaged(self, make_report):
        """Test failed runs are excluded from means but counted."""
        reports = [make_report("reg_split", i, amc=0.875) for i in range(2)]
        failed = make_report("reg_split", 2, amc=0.5)
        failed.mark_failed("SingularKernelError: boom")
        row = aggregate(reports + [failed]).row("reg_split")
        assert (row.n_runs, row.n_failed) == (2, 1)
        assert row.cells["amc"].mean == 0.875

    def test_inapplicable_metrics_omitted(self, make_report):
        """Test metrics that no run produced have no cell."""
        row = aggregate([make_report()]).row("reg_split")
        assert "ssc" not in row.cells
        assert "amc" in row.cells

    def test_order_insensitive(self, make_report):
        """Test report order does not change the table."""
        reports = [
            make_report(method, i, amc=v)
            for method in ("reg_split", "weighted", "epic_knn")
            for i, v in enumerate([0.875, 0.9375])
        ]
        assert aggregate(reports).to_dict() == aggregate(list(reversed(reports))).to_dict()
        assert [row.method for row in aggregate(reports).rows] == ["reg_split", "weighted", "epic_knn"]

    def test_mismatched_configs(self, make_report):
        """Test reports from different configs refuse to aggregate."""
        with pytest.raises(ReportMismatchError, match="different configs"):
            aggregate([make_report(), make_report(config_hash="def456")])
        with pytest.raises(ReportMismatchError, match="alpha"):
            aggregate([make_report(), make_report(alpha=0.2)])

    def test_empty(self):
        """Test there is nothing to aggregate."""
        with pytest.raises(ValueError):
            aggregate([])
