"""
Versioned on-disk format for fitted predictive models.

A model file is a magic line, one JSON header line (format version, kind,
seed, normalizers, kind-specific parameters, optional threshold record) and
an npz payload with the kind-specific arrays.
"""

import io
import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from epicscore.exceptions import ModelFormatError
from epicscore.models.calibration import CalibrationResult
from epicscore.models.config import PredictiveKind
from epicscore.services.predictive import (
    AffineNormalizer,
    PredictiveCdfModel,
    create_model,
    scaler_from_dict,
    scaler_to_dict,
)
from epicscore.utils.logger import get_logger

logger = get_logger(__name__)

MAGIC = b"EPICSCORE-MODEL\n"
FORMAT_VERSION = 1


def _write(path: Path, header: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> None:
    payload = io.BytesIO()
    np.savez(payload, **{name: np.asarray(value) for name, value in arrays.items()})
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(payload.getvalue())


def _read(path: Path) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    if not path.exists():
        raise FileNotFoundError(f"Model file not found: {path}")
    with open(path, "rb") as f:
        if f.readline() != MAGIC:
            raise ModelFormatError(f"{path} is not an epicscore model file")
        try:
            header = json.loads(f.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ModelFormatError(f"Corrupt header in {path}: {e}") from e
        payload = f.read()

    version = header.get("version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"Unsupported model format version {version} in {path}")
    try:
        with np.load(io.BytesIO(payload), allow_pickle=False) as data:
            arrays = {name: data[name] for name in data.files}
    except (ValueError, OSError) as e:
        raise ModelFormatError(f"Corrupt payload in {path}: {e}") from e
    return header, arrays


def save_model(
    model: PredictiveCdfModel,
    path: Path,
    extra: Optional[Dict[str, Any]] = None
) -> Path:
    """
    Write a fitted predictive model.

    Args:
        model: Fitted model.
        path: Destination file.
        extra: Additional JSON-serializable header records.

    Returns:
        The path written.
    """
    if not model.is_fitted:
        raise ValueError("Cannot save an unfitted model")
    path = Path(path)
    params, arrays = model.export_state()
    header = {
        "version": FORMAT_VERSION,
        "kind": model.kind.value,
        "seed": model.seed,
        "n_fit": model.n_fit,
        "score_normalizer": model.score_normalizer.to_dict(),
        "feature_scaler": scaler_to_dict(model.feature_scaler),
        "params": params,
    }
    if extra:
        header.update(extra)
    _write(path, header, arrays)
    logger.debug(f"Saved {model.kind.value} model to {path}")
    return path


def load_model(path: Path) -> PredictiveCdfModel:
    """
    Read a model written by save_model.

    Raises:
        ModelFormatError: On a bad magic line, header, version or payload.
    """
    header, arrays = _read(Path(path))
    return _restore(header, arrays, path)


def _restore(header: Dict[str, Any], arrays: Dict[str, np.ndarray], path) -> PredictiveCdfModel:
    try:
        kind = PredictiveKind(header["kind"])
        model = create_model(kind, seed=int(header["seed"]))
        model.feature_scaler = scaler_from_dict(header["feature_scaler"])
        model.n_fit = int(header["n_fit"])
        model.restore_state(header["params"], arrays)
        model.score_normalizer = AffineNormalizer.from_dict(header["score_normalizer"])
    except (KeyError, ValueError, TypeError) as e:
        raise ModelFormatError(f"Invalid model record in {path}: {e}") from e
    return model


def save_pipeline(pipeline, path: Path) -> Path:
    """Write an EpicPipeline's predictive model together with its threshold record."""
    record = {
        "pipeline": {
            "calibration": pipeline.calibration.to_dict(),
            "score_kind": pipeline.score.kind.value,
            "n_cal1": pipeline.n_cal1,
            "n_cal2": pipeline.n_cal2,
        }
    }
    return save_model(pipeline.predictive, path, extra=record)


def load_pipeline(path: Path) -> Tuple[PredictiveCdfModel, CalibrationResult, Dict[str, Any]]:
    """
    Read a file written by save_pipeline.

    Returns:
        (predictive model, calibration result, pipeline record).
    """
    header, arrays = _read(Path(path))
    if "pipeline" not in header:
        raise ModelFormatError(f"{path} holds a model without a threshold record")
    model = _restore(header, arrays, path)
    record = header["pipeline"]
    try:
        calibration = CalibrationResult.from_dict(record["calibration"])
    except (KeyError, ValueError, TypeError) as e:
        raise ModelFormatError(f"Invalid threshold record in {path}: {e}") from e
    return model, calibration, record
