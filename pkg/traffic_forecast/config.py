"""Configuration helpers for the traffic forecasting toolkit."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, tzinfo
from pathlib import Path
from typing import Optional, Tuple

from . import schema

_DEFAULT_ALPHA1 = 0.5
_DEFAULT_BETA1 = 1.0
_DEFAULT_GRID_SIZE = 1000
_DEFAULT_INTERVAL_S = 300
_DEFAULT_LEVELS = (0.95, 0.99)
_DEFAULT_WORKERS = 1


def _read_int(name: str, default: int) -> int:
    """Return a positive integer configuration value from the environment."""

    raw_value = os.getenv(name)
    if raw_value is None:
        return default
    try:
        value = int(raw_value)
    except (TypeError, ValueError):
        return default
    return value if value > 0 else default


def _read_float(name: str, default: float) -> float:
    """Return a positive float configuration value from the environment."""

    raw_value = os.getenv(name)
    if raw_value is None:
        return default
    try:
        value = float(raw_value)
    except (TypeError, ValueError):
        return default
    return value if 0 < value < float("inf") else default


def get_alpha1() -> float:
    """Return the prior shape used at the start of every filter run."""

    return _read_float("TRAFFIC_FORECAST_ALPHA1", _DEFAULT_ALPHA1)


def get_beta1() -> float:
    """Return the prior rate used at the start of every filter run."""

    return _read_float("TRAFFIC_FORECAST_BETA1", _DEFAULT_BETA1)


def get_grid_size() -> int:
    """Return the number of k values scanned by the likelihood search."""

    value = _read_int("TRAFFIC_FORECAST_GRID_SIZE", _DEFAULT_GRID_SIZE)
    return value if value >= 2 else _DEFAULT_GRID_SIZE


def get_interval_s() -> int:
    """Return the binning interval in seconds."""

    return _read_int("TRAFFIC_FORECAST_INTERVAL_S", _DEFAULT_INTERVAL_S)


def get_levels() -> Tuple[float, ...]:
    """Return the predictive limit levels, e.g. ``"0.95,0.99"``."""

    raw_value = os.getenv("TRAFFIC_FORECAST_LEVELS", "")
    levels = []
    for part in raw_value.split(","):
        try:
            value = float(part)
        except ValueError:
            continue
        if 0 < value < 1:
            levels.append(value)
    return tuple(sorted(set(levels))) or _DEFAULT_LEVELS


def get_workers() -> int:
    """Return the thread count for grid and per-day evaluation."""

    return _read_int("TRAFFIC_FORECAST_WORKERS", _DEFAULT_WORKERS)


@dataclass(frozen=True)
class IngestConfig:
    """Declarative ingest settings: day timezone, maintenance windows, status filter."""

    timezone: Optional[tzinfo] = None
    maintenance: Tuple[Tuple[datetime, datetime], ...] = ()
    status_filter: Tuple[str, ...] = field(default_factory=tuple)


def ingest_config_from_mapping(obj: object) -> IngestConfig:
    normalized = schema.validate_ingest_config(obj)
    tz_name = normalized["timezone"]
    return IngestConfig(
        timezone=schema.parse_timezone(tz_name) if tz_name else None,
        maintenance=tuple(normalized["maintenance"]),
        status_filter=tuple(normalized["status_filter"]),
    )


def load_ingest_config(path: Optional[Path]) -> IngestConfig:
    """Read the JSON ingest config at ``path``; ``None`` gives the defaults."""

    if path is None:
        return IngestConfig()
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return ingest_config_from_mapping(payload)
