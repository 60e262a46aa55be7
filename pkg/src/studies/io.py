"""File I/O for datasets, configurations, grids and fit reports"""

import json
import logging
import os
from typing import Any, Dict, Optional

import pandas as pd
from pydantic import ValidationError

from src.core.exceptions import ConfigError, DataFormatError
from src.core.inference import FitResult
from src.core.model import Dataset, LatentTruth
from src.core.schemas import FitReport, McemConfig, StudyGrid

logger = logging.getLogger(__name__)


def _ensure_parent(path: str):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def read_dataset(path: str, kind) -> Dataset:
    """Read a `stratum,effort,y` CSV; effort defaults to 1.0 when the column is absent"""
    try:
        frame = pd.read_csv(path, dtype={"stratum": str})
    except FileNotFoundError:
        raise DataFormatError(f"data file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataFormatError(f"cannot parse {path}: {e}")
    return Dataset.from_frame(frame, kind)


def write_dataset(dataset: Dataset, path: str):
    _ensure_parent(path)
    dataset.to_frame().to_csv(path, index=False)


def write_latent(latent: LatentTruth, dataset: Dataset, path: str):
    _ensure_parent(path)
    latent.to_frame(dataset).to_csv(path, index=False)


def write_frame(frame: pd.DataFrame, path: str):
    _ensure_parent(path)
    frame.to_csv(path, index=False)


def _read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}")


def read_mcem_config(path: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> McemConfig:
    """McemConfig from a JSON file holding either the bare keys or an `mcem` section"""
    data: Dict[str, Any] = {}
    if path:
        raw = _read_json(path)
        data = raw.get("mcem", raw) if isinstance(raw, dict) else {}
    data.update(overrides or {})
    return McemConfig.from_dict(data)


def read_grid(path: str) -> StudyGrid:
    return StudyGrid.from_dict(_read_json(path))


def write_fit(result: FitResult, path: str):
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(result.to_json())


def read_fit(path: str) -> FitReport:
    try:
        return FitReport.model_validate(_read_json(path))
    except ValidationError as e:
        raise ConfigError(f"{path} is not a fit report: {e}")


def write_json(data: Dict[str, Any], path: str):
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
