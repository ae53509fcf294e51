"""
Unit tests for ConfigManager service.
"""

import json
from pathlib import Path

import pytest

from epicscore.exceptions import ConfigError
from epicscore.models.config import ExperimentConfig
from epicscore.services.config_manager import (
    THREADS_ENV_VAR,
    ConfigManager,
    config_hash,
    worker_count,
)


@pytest.mark.unit
class TestConfigHash:
    """Test config_hash."""

    def test_stable(self, quick_config):
        """Test equal configs hash equally."""
        clone = ExperimentConfig.model_validate(quick_config.model_dump(mode="json"))
        assert config_hash(clone) == config_hash(quick_config)
        assert len(config_hash(quick_config)) == 64

    def test_output_excluded(self, quick_config):
        """Test the output location does not change the hash."""
        moved = quick_config.model_copy(update={"output": "elsewhere.json"})
        assert config_hash(moved) == config_hash(quick_config)

    def test_sensitive_to_protocol(self, quick_config):
        """Test protocol fields change the hash."""
        other = quick_config.model_copy(update={"alpha": 0.2})
        assert config_hash(other) != config_hash(quick_config)


@pytest.mark.unit
class TestWorkerCount:
    """Test worker_count."""

    def test_explicit_request(self):
        """Test a request is capped by the task count."""
        assert worker_count(3, requested=8) == 3
        with pytest.raises(ConfigError):
            worker_count(3, requested=0)

    def test_environment_cap(self, monkeypatch):
        """Test EPIC_THREADS caps the pool."""
        monkeypatch.setenv(THREADS_ENV_VAR, "2")
        assert worker_count(10) == 2
        assert worker_count(1) == 1

    @pytest.mark.parametrize("raw", ["zero", "0", "-3"])
    def test_invalid_environment(self, monkeypatch, raw):
        """Test non-positive or non-numeric values."""
        monkeypatch.setenv(THREADS_ENV_VAR, raw)
        with pytest.raises(ConfigError, match=THREADS_ENV_VAR):
            worker_count(4)


@pytest.mark.unit
class TestConfigManager:
    """Test ConfigManager service."""

    def test_defaults_without_file(self):
        """Test no file gives the default config."""
        manager = ConfigManager()
        assert manager.load_config() == ExperimentConfig()
        assert manager.base_dir == Path.cwd()

    def test_load_from_file(self, config_file, quick_config):
        """Test loading a saved config."""
        manager = ConfigManager(config_file)
        assert manager.load_config() == quick_config
        assert manager.base_dir == config_file.resolve().parent

    def test_missing_file(self, tmp_path):
        """Test a nonexistent file."""
        with pytest.raises(ConfigError, match="not found"):
            ConfigManager(tmp_path / "none.json").load_config()

    def test_invalid_json(self, tmp_path):
        """Test malformed JSON."""
        path = tmp_path / "bad.json"
        path.write_text("{ not json", encoding="utf-8")
        with pytest.raises(ConfigError, match="Invalid JSON"):
            ConfigManager(path).load_config()

    def test_non_object(self, tmp_path):
        """Test a JSON array."""
        path = tmp_path / "list.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigError, match="JSON object"):
            ConfigManager(path).load_config()

    def test_validation_failure(self, tmp_path):
        """Test schema errors name the field."""
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"alpha": 1.5}), encoding="utf-8")
        with pytest.raises(ConfigError, match="alpha"):
            ConfigManager(path).load_config()

    def test_overrides(self, config_file):
        """Test command-line overrides are applied and validated."""
        manager = ConfigManager(config_file)
        config = manager.apply_overrides(seed=9, alpha=0.2, runs=4, out="r.json", variance_convention="var")
        assert (config.seed, config.alpha, config.n_runs) == (9, 0.2, 4)
        assert config.output == "r.json"
        assert config.dataset.variance_convention == "var"
        assert config.run_seeds() == [9, 10, 11, 12]
        with pytest.raises(ConfigError, match="Invalid override"):
            manager.apply_overrides(alpha=2.0)

    def test_runs_override_drops_mismatched_seeds(self, tmp_path, quick_config):
        """Test explicit seeds are discarded when the run count changes."""
        path = tmp_path / "seeded.json"
        data = quick_config.model_dump(mode="json")
        data["seeds"] = [4, 8]
        path.write_text(json.dumps(data), encoding="utf-8")
        config = ConfigManager(path).apply_overrides(runs=3)
        assert config.seeds is None

    def test_save_and_template(self, tmp_path, quick_config):
        """Test saving, template writing and overwrite protection."""
        manager = ConfigManager(tmp_path / "experiment.json")
        saved = manager.save_config(quick_config)
        assert ConfigManager(saved).load_config() == quick_config
        with pytest.raises(ConfigError, match="Refusing to overwrite"):
            manager.write_template()
        manager.write_template(overwrite=True)
        assert ConfigManager(saved).load_config() == ExperimentConfig()

    def test_validate_config(self, config_file):
        """Test a valid synthetic config."""
        valid, errors = ConfigManager(config_file).validate_config()
        assert valid and errors == []

    def test_validate_missing_csv(self, tmp_path):
        """Test CSV paths are checked relative to the config file."""
        path = tmp_path / "csv.json"
        path.write_text(json.dumps({
            "dataset": {"kind": "csv", "path": "data.csv", "target_column": "y"},
        }), encoding="utf-8")
        valid, errors = ConfigManager(path).validate_config()
        assert not valid
        assert "dataset.path does not exist" in errors[0]

    def test_summary(self, config_file):
        """Test the human-readable summary."""
        summary = ConfigManager(config_file).get_config_summary()
        assert summary.startswith("=== Experiment: quick ===")
        assert "Methods: reg_split, weighted, epic_knn" in summary
        assert "Config hash:" in summary
