"""Serialisers for the counts, likelihood, forecast and sweep file formats."""
from __future__ import annotations

import json
from datetime import datetime, timezone
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Optional, Sequence, Tuple

if TYPE_CHECKING:  # pragma: no cover
    from .estimation import FitReport, LikelihoodCurve
    from .evaluation import ForecastRecord
    from .ingest import TrafficSeries

RECORDS_HEADER = "index,point_proposed,upper95,upper99,point_stationary,observed"


def _number(value: Optional[float]) -> str:
    """Format a float so that rewriting an unchanged value gives the same bytes."""

    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _stamp(moment: datetime) -> str:
    return moment.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _csv(header: str, rows: Iterable[Sequence[str]]) -> bytes:
    lines = [header, *(",".join(row) for row in rows)]
    return ("\n".join(lines) + "\n").encode("utf-8")


def to_json(payload: Mapping[str, Any] | Sequence[Any]) -> bytes:
    """Return ``payload`` as UTF-8 JSON with sorted keys and a trailing newline."""

    return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")


def series_to_csv(series: "TrafficSeries") -> bytes:
    rows = (
        (_stamp(series.timestamp(i)), "" if count is None else str(count))
        for i, count in enumerate(series.counts)
    )
    return _csv("timestamp,count", rows)


def theta_to_csv(series: "TrafficSeries", theta: Sequence[float]) -> bytes:
    rows = ((_stamp(series.timestamp(i)), _number(value)) for i, value in enumerate(theta))
    return _csv("timestamp,theta", rows)


def curve_to_csv(curve: "LikelihoodCurve") -> bytes:
    rows = ((_number(k), _number(ll)) for k, ll in zip(curve.grid, curve.loglik))
    return _csv("k,loglik", rows)


def fit_report_to_json(report: "FitReport") -> bytes:
    from . import schema

    return to_json(schema.validate_fit_report(report.to_dict()))


def evaluation_reports_to_json(documents: Sequence[Mapping[str, Any]]) -> bytes:
    """Validate each evaluation document and wrap them as ``{"reports": [...]}``."""

    from . import schema

    return to_json({"reports": [schema.validate_evaluation_report(doc) for doc in documents]})


def records_to_csv(
    proposed: Sequence["ForecastRecord"], stationary: Sequence["ForecastRecord"]
) -> bytes:
    """Join the two arms of an evaluation on interval index for plotting."""

    if len(proposed) != len(stationary):
        raise ValueError("proposed and stationary records must align")
    rows = []
    for mine, base in zip(proposed, stationary):
        if mine.index != base.index:
            raise ValueError(f"record index mismatch: {mine.index} != {base.index}")
        rows.append(
            (
                str(mine.index),
                _number(mine.point),
                _number(mine.upper95),
                _number(mine.upper99),
                _number(base.point),
                str(mine.observed),
            )
        )
    return _csv(RECORDS_HEADER, rows)


def sweep_to_csv(pairs: Iterable[Tuple[float, float]]) -> bytes:
    return _csv("k,mse", ((_number(k), _number(mse)) for k, mse in pairs))


def daily_aic_to_csv(table: Iterable[Tuple[str, "FitReport"]]) -> bytes:
    rows = (
        (
            label,
            _number(fit.k_hat),
            _number(fit.aic_proposed),
            _number(fit.aic_stationary),
            fit.selected.value,
        )
        for label, fit in table
    )
    return _csv("label,k_hat,aic_proposed,aic_stationary,selected", rows)
