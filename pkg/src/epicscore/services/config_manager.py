"""
Configuration management service.

Handles loading, overriding, hashing and validation of experiment
configuration files.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import ValidationError

from epicscore.exceptions import ConfigError
from epicscore.models.config import ExperimentConfig

THREADS_ENV_VAR = "EPIC_THREADS"

# Fields that only direct where output goes
OUTPUT_FIELDS = {"output"}


def config_hash(config: ExperimentConfig) -> str:
    """
    SHA-256 of the canonical JSON of a config, output fields excluded.

    Args:
        config: Experiment configuration.

    Returns:
        Hex digest.
    """
    canonical = json.dumps(
        config.model_dump(mode="json", exclude=OUTPUT_FIELDS),
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _format_validation_error(error: ValidationError) -> List[str]:
    messages = []
    for item in error.errors():
        location = ".".join(str(part) for part in item.get("loc", ())) or "config"
        messages.append(f"{location}: {item.get('msg')}")
    return messages


def worker_count(n_tasks: int, requested: Optional[int] = None) -> int:
    """
    Number of worker processes for n_tasks runs.

    An explicit request wins; otherwise EPIC_THREADS (from the environment
    or a .env file) caps the pool, defaulting to the CPU count.

    Raises:
        ConfigError: If EPIC_THREADS is not a positive integer.
    """
    if requested is not None:
        if requested < 1:
            raise ConfigError(f"Worker count must be >= 1: {requested}")
        return max(1, min(requested, n_tasks))

    load_dotenv()
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None or raw.strip() == "":
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV_VAR} must be a positive integer, got '{raw}'")
        if cap < 1:
            raise ConfigError(f"{THREADS_ENV_VAR} must be a positive integer, got '{raw}'")
    return max(1, min(cap, n_tasks))


class ConfigManager:
    """
    Manages experiment configuration.

    Loads configuration from JSON files, applies command-line overrides,
    validates settings, and writes default templates.
    """

    DEFAULT_CONFIG_FILENAME = "experiment.json"

    def __init__(self, config_file: Optional[Path] = None):
        """
        Initialize ConfigManager.

        Args:
            config_file: Experiment JSON file. If None, defaults are used.
        """
        self.config_file = Path(config_file) if config_file else None
        self._config: Optional[ExperimentConfig] = None

    @property
    def base_dir(self) -> Path:
        """Directory that relative dataset paths are resolved against."""
        if self.config_file is not None:
            return self.config_file.resolve().parent
        return Path.cwd()

    def load_config(self) -> ExperimentConfig:
        """
        Load the experiment configuration.

        Returns:
            Validated ExperimentConfig (defaults when no file is set).

        Raises:
            ConfigError: If the file is missing, is not JSON, or fails validation.
        """
        if self.config_file is None:
            self._config = ExperimentConfig()
            return self._config

        if not self.config_file.exists():
            raise ConfigError(f"Configuration file not found: {self.config_file}")

        try:
            with open(self.config_file, 'r', encoding='utf-8') as f:
                config_data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON in config file {self.config_file}: {e}")

        if not isinstance(config_data, dict):
            raise ConfigError(f"Config file {self.config_file} must hold a JSON object")

        try:
            self._config = ExperimentConfig(**config_data)
        except ValidationError as e:
            raise ConfigError(
                f"Invalid configuration in {self.config_file}: "
                + "; ".join(_format_validation_error(e))
            )
        return self._config

    def get_config(self) -> ExperimentConfig:
        """
        Get current configuration (loads if not already loaded).

        Returns:
            Current ExperimentConfig.
        """
        if self._config is None:
            self._config = self.load_config()
        return self._config

    def apply_overrides(
        self,
        seed: Optional[int] = None,
        alpha: Optional[float] = None,
        runs: Optional[int] = None,
        out: Optional[str] = None,
        variance_convention: Optional[str] = None
    ) -> ExperimentConfig:
        """
        Apply command-line overrides and re-validate the whole config.

        Raises:
            ConfigError: If the overridden config is invalid.
        """
        data: Dict[str, Any] = self.get_config().model_dump()
        if seed is not None:
            data["seed"] = seed
        if alpha is not None:
            data["alpha"] = alpha
        if runs is not None:
            data["n_runs"] = runs
            if data.get("seeds") is not None and len(data["seeds"]) != runs:
                data["seeds"] = None
        if out is not None:
            data["output"] = str(out)
        if variance_convention is not None:
            data["dataset"]["variance_convention"] = variance_convention

        try:
            self._config = ExperimentConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigError("Invalid override: " + "; ".join(_format_validation_error(e)))
        return self._config

    def save_config(self, config: ExperimentConfig, path: Optional[Path] = None) -> Path:
        """
        Save a configuration as pretty-printed JSON.

        Args:
            config: Configuration to save.
            path: Destination; defaults to the managed config file.

        Returns:
            The path written.
        """
        target = Path(path) if path else self.config_file
        if target is None:
            target = Path(self.DEFAULT_CONFIG_FILENAME)
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, 'w', encoding='utf-8') as f:
            json.dump(config.model_dump(mode="json"), f, indent=2, sort_keys=True)
            f.write("\n")
        return target

    def write_template(self, path: Optional[Path] = None, overwrite: bool = False) -> Path:
        """
        Write a default experiment config.

        Raises:
            ConfigError: If the target exists and overwrite is False.
        """
        target = Path(path) if path else (self.config_file or Path(self.DEFAULT_CONFIG_FILENAME))
        if target.exists() and not overwrite:
            raise ConfigError(f"Refusing to overwrite existing config: {target}")
        return self.save_config(ExperimentConfig(), target)

    def validate_config(self) -> Tuple[bool, List[str]]:
        """
        Validate current configuration.

        Returns:
            Tuple of (is_valid, list_of_errors).
        """
        errors: List[str] = []

        try:
            config = self.get_config()

            dataset = config.dataset
            if dataset.kind == "csv":
                for label, name in (("path", dataset.path), ("predictions_path", dataset.predictions_path)):
                    if name is None:
                        continue
                    path = Path(name)
                    if not path.is_absolute():
                        path = self.base_dir / path
                    if not path.exists():
                        errors.append(f"dataset.{label} does not exist: {path}")

            if config.split_ratios[1] <= 0:
                errors.append("split_ratios gives the calibration set no points")

            worker_count(config.n_runs)

        except ConfigError as e:
            errors.append(str(e))
        except Exception as e:
            errors.append(f"Configuration validation error: {e}")

        return (len(errors) == 0, errors)

    def get_config_summary(self) -> str:
        """
        Get human-readable summary of current configuration.

        Returns:
            Formatted configuration summary.
        """
        config = self.get_config()
        dataset = config.dataset

        if dataset.kind == "csv":
            source = f"CSV {dataset.path} (target '{dataset.target_column}')"
        elif dataset.kind == "blobs":
            source = f"Gaussian blobs, n={dataset.n}, k={dataset.k_classes}, spread={dataset.spread:g}"
        else:
            source = f"Bimodal synthetic, n={dataset.n}, noise as {dataset.variance_convention}"

        lo, hi = config.quantile_levels()
        summary = [
            f"=== Experiment: {config.name} ===",
            "",
            "Dataset:",
            f"  Source: {source}",
            f"  Split (train/cal/test): {'/'.join(f'{r:g}' for r in config.split_ratios)}",
            f"  Calibration reserve: {config.calibration_split.cal2_fraction:g} "
            f"(capped at {config.calibration_split.cap} above {config.calibration_split.cap_threshold})",
            "",
            "Protocol:",
            f"  Methods: {', '.join(config.methods)}",
            f"  Alpha: {config.alpha:g}",
            f"  Runs: {config.n_runs} (seeds {config.run_seeds()[0]}..{config.run_seeds()[-1]})",
            f"  CQR quantiles: {lo:g}, {hi:g}",
            "",
            "Models:",
            f"  Base predictor: {config.base_model.kind.value}",
            f"  Quantile predictor: {config.quantile_model.kind.value}",
            f"  GP grid: {len(config.gp.lengthscale_grid)} x {len(config.gp.signal_variance_grid)} "
            f"x {len(config.gp.noise_variance_grid)}",
            f"  MDN: K={config.mdn.n_components}, T={config.mdn.mc_passes}, {config.mdn.cdf_mode}",
            f"  BART: m={config.bart.n_trees}, burn-in={config.bart.burn_in}, draws={config.bart.n_draws}",
            "",
            f"Config hash: {config_hash(config)}",
        ]

        return "\n".join(summary)

    def __repr__(self) -> str:
        """Detailed representation."""
        return f"ConfigManager(config_file={self.config_file}, loaded={self._config is not None})"
