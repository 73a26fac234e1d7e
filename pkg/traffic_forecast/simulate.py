"""Synthetic traffic drawn from the time-varying Poisson model itself."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Dict, List, Tuple

import numpy as np

from . import estimation, evaluation, metrics, model_core, samplers
from .ingest import DEFAULT_INTERVAL_S, TrafficSeries

logger = logging.getLogger(__name__)

DEFAULT_START = datetime(2005, 3, 18, tzinfo=timezone.utc)
_TINY = np.finfo(float).tiny
# Spawn key reserved for the initial rate draw; tick t uses key (t,).
_INIT_STREAM = 0


@dataclass(frozen=True)
class SimConfig:
    k_true: float
    alpha1: float = model_core.DEFAULT_ALPHA1
    beta1: float = model_core.DEFAULT_BETA1
    T: int = 288
    seed: int = 0
    interval_seconds: int = DEFAULT_INTERVAL_S
    start: datetime = DEFAULT_START

    def __post_init__(self) -> None:
        model_core.initial_state(self.alpha1, self.beta1, self.k_true)
        if self.T <= 0:
            raise model_core.DomainError(f"T must be positive, got {self.T!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise model_core.DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")


@dataclass(frozen=True)
class Simulation:
    series: TrafficSeries
    theta: Tuple[float, ...]


def simulate_traffic(config: SimConfig) -> Simulation:
    """Draw counts and the latent rate path for ``config.T`` ticks.

    The rate starts from Gamma(alpha1, beta1). At each tick a count is drawn
    from Poisson(theta), a companion filter absorbs it, and the rate moves to
    theta * u / k with u ~ Beta(k * a, (1 - k) * a), where ``a`` is the
    companion filter's shape after the Bayes update and before the discount.
    This coupling makes the filter's Gamma posterior exact for the simulated
    data. With k = 1 the rate stays constant.
    """

    k = config.k_true
    theta = samplers.sample_gamma(config.alpha1, config.beta1, samplers.make_rng(config.seed, _INIT_STREAM))
    state = model_core.initial_state(config.alpha1, config.beta1, k)
    counts: List[int] = []
    path: List[float] = []
    for tick in range(1, config.T + 1):
        rng = samplers.make_rng(config.seed, tick)
        path.append(theta)
        x = samplers.sample_poisson(theta, rng)
        counts.append(x)
        if k < 1.0:
            shape = state.alpha + x
            u = samplers.sample_beta(k * shape, (1.0 - k) * shape, rng)
            theta = max(theta * u / k, _TINY)
        state = model_core.discount_step(state, x)
    metrics.inc("simulated_ticks_total", value=float(config.T))
    if config.T > 1 and not any(counts):
        logger.warning(
            json.dumps(
                {
                    "event": "simulation_collapsed",
                    "k": k,
                    "seed": config.seed,
                    "T": config.T,
                    "alpha1": config.alpha1,
                }
            )
        )
    series = TrafficSeries(
        config.start,
        config.interval_seconds,
        tuple(counts),
        f"simulated:k={k!r},seed={config.seed}",
    )
    return Simulation(series=series, theta=tuple(path))


@dataclass(frozen=True)
class RecoverySummary:
    k_true: float
    T: int
    seeds: Tuple[int, ...]
    k_hats: Tuple[float, ...]
    aic_selected: Tuple[str, ...]
    mse_proposed: Tuple[float, ...]
    mse_stationary: Tuple[float, ...]
    collapsed: Tuple[bool, ...] = ()

    @property
    def median(self) -> float:
        return float(np.median(self.k_hats))

    @property
    def iqr(self) -> float:
        q75, q25 = np.percentile(self.k_hats, [75, 25])
        return float(q75 - q25)

    @property
    def true_regime(self) -> str:
        return (
            estimation.Model.STATIONARY.value
            if self.k_true == 1.0
            else estimation.Model.PROPOSED.value
        )

    @property
    def aic_correct_fraction(self) -> float:
        hits = sum(1 for choice in self.aic_selected if choice == self.true_regime)
        return hits / len(self.aic_selected)

    @property
    def mse_win_fraction(self) -> float:
        wins = sum(1 for a, b in zip(self.mse_proposed, self.mse_stationary) if a < b)
        return wins / len(self.mse_proposed)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k_true": self.k_true,
            "T": self.T,
            "n_seeds": len(self.seeds),
            "seeds": list(self.seeds),
            "k_hats": list(self.k_hats),
            "median_k_hat": self.median,
            "iqr_k_hat": self.iqr,
            "aic_selected": list(self.aic_selected),
            "aic_correct_fraction": self.aic_correct_fraction,
            "mse_win_fraction": self.mse_win_fraction,
            "collapsed_runs": sum(self.collapsed),
        }


def _recover_one(
    config: SimConfig, grid_size: int
) -> Tuple[float, str, float, float, bool]:
    counts = simulate_traffic(config).series.counts
    fit = estimation.mle_k(counts, grid_size, config.alpha1, config.beta1)
    proposed = evaluation.rolling_forecast(counts, fit.k_hat, config.alpha1, config.beta1)
    stationary = evaluation.rolling_forecast(
        counts, evaluation.STATIONARY_K, config.alpha1, config.beta1
    )
    return (
        fit.k_hat,
        fit.selected.value,
        evaluation.mse(proposed),
        evaluation.mse(stationary),
        not any(counts),
    )


def recovery_experiment(
    k_true: float,
    T: int = 288,
    n_seeds: int = 20,
    alpha1: float = model_core.DEFAULT_ALPHA1,
    beta1: float = model_core.DEFAULT_BETA1,
    *,
    grid_size: int = estimation.DEFAULT_GRID_SIZE,
    base_seed: int = 0,
    workers: int = 1,
) -> RecoverySummary:
    """Simulate ``n_seeds`` runs, fit k on each and summarise the estimates.

    Also records which model AIC selected and the in-sample rolling MSE of
    both filters on every run.
    """

    if n_seeds <= 0:
        raise model_core.DomainError("n_seeds must be positive")
    seeds = tuple(base_seed + i for i in range(n_seeds))
    configs = [SimConfig(k_true, alpha1, beta1, T, seed) for seed in seeds]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _recover_one(c, grid_size), configs))
    else:
        results = [_recover_one(c, grid_size) for c in configs]
    summary = RecoverySummary(
        k_true=float(k_true),
        T=T,
        seeds=seeds,
        k_hats=tuple(r[0] for r in results),
        aic_selected=tuple(r[1] for r in results),
        mse_proposed=tuple(r[2] for r in results),
        mse_stationary=tuple(r[3] for r in results),
        collapsed=tuple(r[4] for r in results),
    )
    logger.info(
        json.dumps(
            {
                "event": "recovery",
                "k_true": summary.k_true,
                "T": T,
                "n_seeds": n_seeds,
                "median_k_hat": summary.median,
                "iqr_k_hat": summary.iqr,
                "aic_correct_fraction": summary.aic_correct_fraction,
            }
        )
    )
    if any(summary.collapsed):
        logger.warning(
            json.dumps(
                {
                    "event": "recovery_collapsed_runs",
                    "collapsed": sum(summary.collapsed),
                    "n_seeds": n_seeds,
                    "alpha1": alpha1,
                }
            )
        )
    return summary


def log_score_gap(counts, k_true: float, k_other: float, alpha1: float, beta1: float) -> float:
    """Mean per-tick log-score advantage of ``k_true`` over ``k_other``."""

    n = len([x for x in counts if x is not None])
    if n == 0:
        raise estimation.EmptyDataError("no observed counts")
    gap = estimation.log_likelihood(counts, k_true, alpha1, beta1) - estimation.log_likelihood(
        counts, k_other, alpha1, beta1
    )
    return gap / n if math.isfinite(gap) else gap
