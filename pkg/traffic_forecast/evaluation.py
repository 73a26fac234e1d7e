"""Rolling one-step-ahead evaluation of the discounted and stationary filters."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from . import estimation, metrics, model_core
from .ingest import TrafficSeries
from .model_core import GammaState

logger = logging.getLogger(__name__)

DEFAULT_LEVELS: Tuple[float, ...] = (0.95, 0.99)
STATIONARY_K = 1.0


class ProtocolError(ValueError):
    """Raised when an evaluation is asked for with too little data."""


@dataclass(frozen=True)
class ForecastRecord:
    """Forecast for one interval, made before its count was seen."""

    index: int
    point: float
    observed: int
    log_score: float
    limits: Mapping[float, int] = field(default_factory=dict)

    @property
    def upper95(self) -> int:
        return self.limits[0.95]

    @property
    def upper99(self) -> int:
        return self.limits[0.99]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "point": self.point,
            "observed": self.observed,
            "log_score": self.log_score,
            "limits": {repr(level): value for level, value in sorted(self.limits.items())},
        }


@dataclass(frozen=True)
class EvaluationReport:
    records: Tuple[ForecastRecord, ...]
    stationary_records: Tuple[ForecastRecord, ...]
    mse_proposed: float
    mse_stationary: float
    k_used: float
    coverage: Mapping[float, float]
    label: str = ""

    @property
    def coverage95(self) -> float:
        return self.coverage[0.95]

    @property
    def coverage99(self) -> float:
        return self.coverage[0.99]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "k_used": self.k_used,
            "mse_proposed": self.mse_proposed,
            "mse_stationary": self.mse_stationary,
            "coverage": {repr(level): value for level, value in sorted(self.coverage.items())},
            "n_records": len(self.records),
        }


@dataclass(frozen=True)
class IntervalRow:
    """Point and upper limits of both models at one interval."""

    index: int
    observed: int
    proposed: Tuple[float, int, int]
    stationary: Tuple[float, int, int]

    def squared_errors(self) -> Dict[str, Tuple[float, float, float]]:
        """Squared error of the expected value and each limit, per model."""

        return {
            name: tuple((value - self.observed) ** 2 for value in triple)  # type: ignore[misc]
            for name, triple in (("proposed", self.proposed), ("stationary", self.stationary))
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "observed": self.observed,
            "proposed": {
                "expected": self.proposed[0],
                "upper95": self.proposed[1],
                "upper99": self.proposed[2],
            },
            "stationary": {
                "expected": self.stationary[0],
                "upper95": self.stationary[1],
                "upper99": self.stationary[2],
            },
            "squared_errors": {k: list(v) for k, v in self.squared_errors().items()},
        }


def _checked_levels(levels: Sequence[float]) -> Tuple[float, ...]:
    checked = sorted({model_core.check_level(level) for level in levels})
    return tuple(checked)


def _roll(
    counts: Sequence[Optional[int]],
    state: GammaState,
    levels: Tuple[float, ...],
) -> Tuple[List[ForecastRecord], GammaState]:
    records: List[ForecastRecord] = []
    for index, x in enumerate(counts):
        if x is None:
            continue
        observed = model_core.check_count(x)
        limits = model_core.predictive_quantiles(state, levels)
        records.append(
            ForecastRecord(
                index=index,
                point=model_core.point_forecast(state),
                observed=observed,
                log_score=model_core.predictive_log_pmf(state, observed),
                limits=dict(zip(levels, limits)),
            )
        )
        state = model_core.discount_step(state, observed)
    metrics.inc("forecasts_total", value=float(len(records)))
    return records, state


def rolling_forecast(
    counts: Sequence[Optional[int]],
    k: float,
    alpha1: float = model_core.DEFAULT_ALPHA1,
    beta1: float = model_core.DEFAULT_BETA1,
    levels: Sequence[float] = DEFAULT_LEVELS,
    *,
    state: Optional[GammaState] = None,
) -> List[ForecastRecord]:
    """Forecast each interval from the intervals before it, then absorb it.

    Missing intervals (``None``) produce no record and leave the state as is.
    The 0.95 and 0.99 limits are always computed alongside ``levels``.
    """

    if state is None:
        state = model_core.initial_state(alpha1, beta1, k)
    records, _ = _roll(counts, state, _checked_levels(tuple(levels) + DEFAULT_LEVELS))
    return records


def mse(records: Sequence[ForecastRecord]) -> float:
    """Mean squared error of the real-valued point forecasts."""

    if not records:
        raise ProtocolError("mean squared error needs at least one record")
    return math.fsum((r.point - r.observed) ** 2 for r in records) / len(records)


def coverage(records: Sequence[ForecastRecord], level: float) -> float:
    """Fraction of records whose observed count is within the upper limit."""

    if not records:
        raise ProtocolError("coverage needs at least one record")
    return sum(1 for r in records if r.observed <= r.limits[level]) / len(records)


def _warm_state(
    previous: Optional[Sequence[Optional[int]]], k: float, alpha1: float, beta1: float
) -> GammaState:
    state = model_core.initial_state(alpha1, beta1, k)
    if previous is not None:
        state = model_core.fold(previous, state)
    return state


def evaluate(
    counts: Sequence[Optional[int]],
    k: float,
    alpha1: float = model_core.DEFAULT_ALPHA1,
    beta1: float = model_core.DEFAULT_BETA1,
    levels: Sequence[float] = DEFAULT_LEVELS,
    *,
    label: str = "",
    warmup: Optional[Sequence[Optional[int]]] = None,
) -> EvaluationReport:
    """Score the filter at ``k`` against the stationary filter on one series.

    ``warmup`` is run through each filter before scoring starts; without it
    both arms start from the prior.
    """

    checked = _checked_levels(tuple(levels) + DEFAULT_LEVELS)
    proposed, _ = _roll(counts, _warm_state(warmup, k, alpha1, beta1), checked)
    stationary, _ = _roll(
        counts, _warm_state(warmup, STATIONARY_K, alpha1, beta1), checked
    )
    if not proposed:
        raise ProtocolError(f"no observed intervals to evaluate{f' in {label}' if label else ''}")
    report = EvaluationReport(
        records=tuple(proposed),
        stationary_records=tuple(stationary),
        mse_proposed=mse(proposed),
        mse_stationary=mse(stationary),
        k_used=float(k),
        coverage={level: coverage(proposed, level) for level in checked},
        label=label,
    )
    logger.info(
        json.dumps(
            {
                "event": "evaluate",
                "label": label,
                "k": report.k_used,
                "n": len(proposed),
                "mse_proposed": round(report.mse_proposed, 6),
                "mse_stationary": round(report.mse_stationary, 6),
            }
        )
    )
    return report


def _day_label(day: TrafficSeries) -> str:
    return day.source.rsplit("#", 1)[-1] if "#" in day.source else day.start.date().isoformat()


def daily_protocol(
    days: Sequence[TrafficSeries],
    alpha1: float = model_core.DEFAULT_ALPHA1,
    beta1: float = model_core.DEFAULT_BETA1,
    grid_size: int = estimation.DEFAULT_GRID_SIZE,
    *,
    levels: Sequence[float] = DEFAULT_LEVELS,
    carry_over: bool = False,
    workers: int = 1,
) -> List[EvaluationReport]:
    """Fit k on each day and forecast the following day with it.

    Every evaluated day starts from the prior unless ``carry_over`` is set,
    in which case each filter first runs through the previous day under its
    own k. Days are independent and are evaluated concurrently when
    ``workers > 1``; the result order always follows ``days``.
    """

    if len(days) < 2:
        raise ProtocolError("the daily protocol needs at least two days")
    for day in days:
        if not day.observed:
            raise ProtocolError(f"day {_day_label(day)} has no observed intervals")

    def run(d: int) -> EvaluationReport:
        previous = days[d - 1]
        fit = estimation.mle_k(previous.counts, grid_size, alpha1, beta1)
        return evaluate(
            days[d].counts,
            fit.k_hat,
            alpha1,
            beta1,
            levels,
            label=_day_label(days[d]),
            warmup=previous.counts if carry_over else None,
        )

    indices = range(1, len(days))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, indices))
    return [run(d) for d in indices]


def daily_aic(
    days: Sequence[TrafficSeries],
    alpha1: float = model_core.DEFAULT_ALPHA1,
    beta1: float = model_core.DEFAULT_BETA1,
    grid_size: int = estimation.DEFAULT_GRID_SIZE,
    *,
    workers: int = 1,
) -> List[Tuple[str, estimation.FitReport]]:
    """Per-day model selection: the fitted k and both AIC values for each day."""

    def run(day: TrafficSeries) -> Tuple[str, estimation.FitReport]:
        return _day_label(day), estimation.compare_models(day.counts, alpha1, beta1, grid_size)

    usable = [day for day in days if day.observed]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, usable))
    return [run(day) for day in usable]


def k_sweep(
    counts: Sequence[Optional[int]],
    ks: Sequence[float],
    alpha1: float = model_core.DEFAULT_ALPHA1,
    beta1: float = model_core.DEFAULT_BETA1,
) -> List[Tuple[float, float]]:
    """Rolling-forecast MSE at each k, ordered by k."""

    checked = sorted({model_core.check_k(k) for k in ks})
    return [(k, mse(rolling_forecast(counts, k, alpha1, beta1))) for k in checked]


def peak_index(records: Sequence[ForecastRecord]) -> int:
    """Interval index of the largest observed count (first one on ties)."""

    if not records:
        raise ProtocolError("no records")
    best = max(records, key=lambda r: (r.observed, -r.index))
    return best.index


def interval_report(report: EvaluationReport, t_star: Optional[int] = None) -> IntervalRow:
    """Expected value and upper limits of both models at interval ``t_star``.

    ``t_star`` defaults to the interval with the largest observed count.
    """

    if t_star is None:
        t_star = peak_index(report.records)
    by_index = {r.index: r for r in report.records}
    base_by_index = {r.index: r for r in report.stationary_records}
    if t_star not in by_index:
        raise IndexError(f"no forecast record for interval {t_star}")
    mine = by_index[t_star]
    base = base_by_index[t_star]
    return IntervalRow(
        index=t_star,
        observed=mine.observed,
        proposed=(mine.point, mine.upper95, mine.upper99),
        stationary=(base.point, base.upper95, base.upper99),
    )
