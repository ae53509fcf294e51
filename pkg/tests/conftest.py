"""
Pytest configuration and shared fixtures for epicscore tests.
"""

import json

import numpy as np
import pytest

from epicscore.models.calibration import NominalLevel
from epicscore.models.config import ExperimentConfig
from epicscore.models.dataset import Dataset
from epicscore.models.reports import MetricsReport
from epicscore.services.data_generator import (
    generate_bimodal_dgp,
    generate_blobs_classification,
)


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(12345)


@pytest.fixture
def alpha():
    """Default nominal level."""
    return NominalLevel(0.1)


@pytest.fixture
def bimodal_data():
    """Small sample of the sparse-middle regression problem."""
    return generate_bimodal_dgp(600, seed=7)


@pytest.fixture
def blobs_data():
    """Small three-class blob problem."""
    return generate_blobs_classification(600, k_classes=3, spread=1.0, seed=7)


@pytest.fixture
def linear_data(rng):
    """Homoscedastic linear regression data."""
    x = rng.uniform(-3, 3, size=(400, 1))
    y = 1.5 * x[:, 0] + rng.normal(0, 0.5, size=400)
    return Dataset(features=x, target=y, provenance="linear")


@pytest.fixture
def quick_config():
    """Small, fast regression experiment."""
    return ExperimentConfig(
        name="quick",
        dataset={"kind": "bimodal", "n": 400},
        methods=["reg_split", "weighted", "epic_knn"],
        n_runs=2,
        seed=3,
    )


@pytest.fixture
def quick_classification_config():
    """Small, fast classification experiment."""
    return ExperimentConfig(
        name="quick_blobs",
        dataset={"kind": "blobs", "n": 450, "k_classes": 3},
        methods=["aps", "epic_aps_knn"],
        n_runs=2,
        seed=3,
    )


@pytest.fixture
def config_file(tmp_path, quick_config):
    """Quick config written to a JSON file."""
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(quick_config.model_dump(mode="json"), indent=2), encoding="utf-8")
    return path


@pytest.fixture
def make_report():
    """Factory for successful MetricsReports with sensible defaults."""
    def factory(method="reg_split", run_index=0, **overrides):
        values = dict(
            method=method,
            dataset="bimodal",
            run_index=run_index,
            seed=run_index,
            alpha=0.1,
            config_hash="abc123",
            n_test=100,
            amc=0.9,
            aisl=2.5,
            mean_il=2.0,
            pearson_rho=0.3,
            n_cal2=200,
        )
        values.update(overrides)
        return MetricsReport(**values)
    return factory


# Marks for organizing tests
def pytest_configure(config):
    """Configure custom pytest markers."""
    config.addinivalue_line(
        "markers", "unit: mark test as a unit test"
    )
    config.addinivalue_line(
        "markers", "integration: mark test as an integration test"
    )
    config.addinivalue_line(
        "markers", "slow: mark test as slow running"
    )
