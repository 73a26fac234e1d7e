"""Validation helpers for the ingest config and the emitted report documents."""
from __future__ import annotations

import re
from datetime import datetime, timedelta, timezone, tzinfo
from typing import Any, Dict, List, Mapping, MutableMapping, Optional, Tuple
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

_OFFSET_RE = re.compile(r"^(?P<sign>[+-])(?P<h>\d{2}):?(?P<m>\d{2})$")
_STATUS_RE = re.compile(r"^[1-5](?:\d{2}|xx)$")
_FIT_KEYS = ("k_hat", "grid", "loglik", "aic_proposed", "aic_stationary", "selected")
_EVALUATION_KEYS = ("label", "k_used", "mse_proposed", "mse_stationary", "coverage", "n_records")


def empty_ingest_config() -> Dict[str, Any]:
    """Return the canonical empty ingest configuration."""

    return {"timezone": None, "maintenance": [], "status_filter": []}


def parse_timezone(value: str) -> tzinfo:
    """Return a tzinfo for ``"UTC"``, a fixed offset like ``"+09:00"`` or an IANA name."""

    text = value.strip()
    if text.upper() in ("UTC", "Z"):
        return timezone.utc
    match = _OFFSET_RE.match(text)
    if match:
        hours, minutes = int(match.group("h")), int(match.group("m"))
        if hours > 23 or minutes > 59:
            raise ValueError(f"invalid UTC offset {value!r}")
        offset = timedelta(hours=hours, minutes=minutes)
        return timezone(-offset if match.group("sign") == "-" else offset)
    try:
        return ZoneInfo(text)
    except (ZoneInfoNotFoundError, ValueError):
        raise ValueError(f"unknown timezone {value!r}") from None


def _parse_instant(value: Any, field: str) -> datetime:
    if not isinstance(value, str):
        raise TypeError(f"{field} must be an ISO-8601 string")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        moment = datetime.fromisoformat(text)
    except ValueError:
        raise ValueError(f"{field} is not an ISO-8601 timestamp: {value!r}") from None
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc)


def _normalize_maintenance(value: Any) -> List[Tuple[datetime, datetime]]:
    if value is None:
        return []
    if not isinstance(value, list):
        raise TypeError("maintenance must be a list")
    windows = []
    for position, item in enumerate(value):
        if not isinstance(item, Mapping):
            raise TypeError(f"maintenance[{position}] must be an object")
        missing = [key for key in ("start", "end") if key not in item]
        if missing:
            raise KeyError(f"maintenance[{position}] missing keys: {', '.join(missing)}")
        start = _parse_instant(item["start"], f"maintenance[{position}].start")
        end = _parse_instant(item["end"], f"maintenance[{position}].end")
        if end <= start:
            raise ValueError(f"maintenance[{position}] ends before it starts")
        windows.append((start, end))
    return windows


def _normalize_status_filter(value: Any) -> List[str]:
    if value is None:
        return []
    if not isinstance(value, list):
        raise TypeError("status_filter must be a list")
    statuses = []
    for item in value:
        if isinstance(item, bool) or not isinstance(item, (int, str)):
            raise TypeError("status_filter entries must be integers or strings")
        text = str(item).strip().lower()
        if not _STATUS_RE.match(text):
            raise ValueError(f"invalid status filter entry {item!r}")
        statuses.append(text)
    return statuses


def _normalize_timezone(value: Any) -> Optional[str]:
    if value is None:
        return None
    if not isinstance(value, str):
        raise TypeError("timezone must be a string or null")
    text = value.strip()
    if not text:
        return None
    parse_timezone(text)
    return text


def validate_ingest_config(obj: Any) -> Dict[str, Any]:
    """Validate and normalize an ingest configuration document.

    Raises
    ------
    KeyError
        If a maintenance window lacks ``start`` or ``end``.
    TypeError
        If a value has the wrong type.
    ValueError
        If a timestamp, timezone or status entry is invalid.
    """

    if not isinstance(obj, MutableMapping):
        return empty_ingest_config()
    return {
        "timezone": _normalize_timezone(obj.get("timezone")),
        "maintenance": _normalize_maintenance(obj.get("maintenance")),
        "status_filter": _normalize_status_filter(obj.get("status_filter")),
    }


def validate_counts_meta(obj: Any) -> Dict[str, Any]:
    """Validate the sidecar written next to a counts CSV.

    Both keys are optional: ``interval_seconds`` (positive integer) and
    ``utc_offset`` (``"+09:00"`` style, the offset found in the source log).
    """

    if not isinstance(obj, Mapping):
        raise TypeError("counts metadata must be a JSON object")
    interval = obj.get("interval_seconds")
    if interval is not None:
        if isinstance(interval, bool) or not isinstance(interval, int):
            raise TypeError("interval_seconds must be an integer")
        if interval <= 0:
            raise ValueError("interval_seconds must be positive")
    offset = obj.get("utc_offset")
    if offset is not None:
        if not isinstance(offset, str):
            raise TypeError("utc_offset must be a string or null")
        if not _OFFSET_RE.match(offset.strip()):
            raise ValueError(f"invalid utc_offset {offset!r}")
        offset = offset.strip()
    return {"interval_seconds": interval, "utc_offset": offset}


def _ensure_required_keys(obj: Mapping[str, Any], keys: Tuple[str, ...], kind: str) -> None:
    missing = [key for key in keys if key not in obj]
    if missing:
        raise KeyError(f"{kind} missing required keys: {', '.join(missing)}")


def _require_number(value: Any, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"{field} must be a number")
    return float(value)


def validate_fit_report(obj: Mapping[str, Any]) -> Dict[str, Any]:
    """Check a fit report document before it is written."""

    _ensure_required_keys(obj, _FIT_KEYS, "fit report")
    grid = obj["grid"]
    loglik = obj["loglik"]
    if not isinstance(grid, list) or not isinstance(loglik, list):
        raise TypeError("grid and loglik must be lists")
    if len(grid) != len(loglik):
        raise ValueError("grid and loglik must have the same length")
    k_hat = _require_number(obj["k_hat"], "k_hat")
    if not 0 < k_hat <= 1:
        raise ValueError("k_hat must lie in (0, 1]")
    _require_number(obj["aic_proposed"], "aic_proposed")
    _require_number(obj["aic_stationary"], "aic_stationary")
    if obj["selected"] not in ("proposed", "stationary"):
        raise ValueError("selected must be 'proposed' or 'stationary'")
    return dict(obj)


def validate_evaluation_report(obj: Mapping[str, Any]) -> Dict[str, Any]:
    """Check an evaluation report document before it is written."""

    _ensure_required_keys(obj, _EVALUATION_KEYS, "evaluation report")
    for name in ("k_used", "mse_proposed", "mse_stationary"):
        _require_number(obj[name], name)
    if obj["mse_proposed"] < 0 or obj["mse_stationary"] < 0:
        raise ValueError("mean squared errors must be non-negative")
    coverage = obj["coverage"]
    if not isinstance(coverage, Mapping):
        raise TypeError("coverage must be an object")
    for level, value in coverage.items():
        if not 0 <= _require_number(value, f"coverage[{level}]") <= 1:
            raise ValueError(f"coverage[{level}] must lie in [0, 1]")
    return dict(obj)
