"""Likelihood of the discount constant, its grid MLE and AIC model selection."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import metrics, model_core
from .model_core import GammaState

logger = logging.getLogger(__name__)

DEFAULT_GRID_SIZE = 1000
PROPOSED_PARAMS = 1
STATIONARY_PARAMS = 0


class EmptyDataError(ValueError):
    """Raised when a likelihood is requested for a series without observations."""


class Model(str, Enum):
    PROPOSED = "proposed"
    STATIONARY = "stationary"


@dataclass(frozen=True)
class LikelihoodCurve:
    """Log-likelihood of the data at every grid value of ``k``."""

    grid: tuple
    loglik: tuple
    argmax_index: int

    def __post_init__(self) -> None:
        if len(self.grid) != len(self.loglik):
            raise ValueError("grid and loglik must have the same length")
        if not self.grid:
            raise ValueError("grid must not be empty")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("grid must be strictly increasing")
        if not 0 <= self.argmax_index < len(self.grid):
            raise ValueError("argmax_index out of range")

    @property
    def k_max(self) -> float:
        return self.grid[self.argmax_index]

    @property
    def max_loglik(self) -> float:
        return self.loglik[self.argmax_index]


@dataclass(frozen=True)
class FitReport:
    k_hat: float
    curve: LikelihoodCurve
    aic_proposed: float
    aic_stationary: float
    selected: Model
    n_observations: int
    k_refined: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        """Return the documented JSON object for this report."""

        payload: Dict[str, Any] = {
            "k_hat": self.k_hat,
            "grid": list(self.curve.grid),
            "loglik": list(self.curve.loglik),
            "aic_proposed": self.aic_proposed,
            "aic_stationary": self.aic_stationary,
            "selected": self.selected.value,
            "n_observations": self.n_observations,
        }
        if self.k_refined is not None:
            payload["k_refined"] = self.k_refined
        return payload


def _observed(counts: Sequence[Optional[int]]) -> List[int]:
    return [model_core.check_count(x) for x in counts if x is not None]


def log_likelihood_terms(
    counts: Sequence[Optional[int]],
    k: float,
    alpha1: float,
    beta1: float,
    *,
    state: Optional[GammaState] = None,
) -> np.ndarray:
    """Return ln p(x_i | x_1..x_{i-1}, k) for every observed count.

    Each term is scored against the state before the count is absorbed; the
    first one uses the prior (alpha1, beta1). ``None`` entries are missing
    intervals and leave the state untouched. ``state`` continues scoring
    from an existing filter state instead of the prior.
    """

    if state is None:
        state = model_core.initial_state(alpha1, beta1, k)
    elif state.k != model_core.check_k(k):
        raise model_core.DomainError("state was built with a different k")
    alphas: List[float] = []
    betas: List[float] = []
    values = _observed(counts)
    for x in values:
        alphas.append(state.alpha)
        betas.append(state.beta)
        state = model_core.discount_step(state, x)
    metrics.inc("likelihood_evaluations_total")
    return model_core.predictive_logpmf(alphas, betas, values)


def log_likelihood(
    counts: Sequence[Optional[int]], k: float, alpha1: float, beta1: float
) -> float:
    """Predictive log-likelihood of ``counts`` under discount constant ``k``."""

    terms = log_likelihood_terms(counts, k, alpha1, beta1)
    if terms.size == 0:
        raise EmptyDataError("log-likelihood needs at least one observed count")
    return math.fsum(terms.tolist())


def log_likelihood_grid(
    counts: Sequence[Optional[int]],
    ks: Sequence[float],
    alpha1: float,
    beta1: float,
) -> np.ndarray:
    """Evaluate the log-likelihood at every ``k`` in ``ks`` at once."""

    values = _observed(counts)
    if not values:
        raise EmptyDataError("log-likelihood needs at least one observed count")
    grid = np.asarray(ks, dtype=float)
    for k in grid:
        model_core.check_k(k)
    prior = model_core.initial_state(alpha1, beta1)
    alpha = np.full(grid.shape, prior.alpha)
    beta = np.full(grid.shape, prior.beta)
    total = np.zeros(grid.shape)
    for x in values:
        total += model_core.predictive_logpmf(alpha, beta, x)
        alpha = np.maximum(grid * (alpha + x), model_core.SHAPE_FLOOR)
        beta = grid * (beta + 1.0)
    metrics.inc("likelihood_evaluations_total", value=float(grid.size))
    return total


def _evaluate_grid(
    counts: Sequence[Optional[int]],
    grid: np.ndarray,
    alpha1: float,
    beta1: float,
    workers: int,
) -> np.ndarray:
    if workers <= 1 or grid.size < 2 * workers:
        return log_likelihood_grid(counts, grid, alpha1, beta1)
    chunks = np.array_split(grid, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(
            pool.map(lambda chunk: log_likelihood_grid(counts, chunk, alpha1, beta1), chunks)
        )
    return np.concatenate(parts)


def aic(
    counts: Sequence[Optional[int]],
    k: float,
    alpha1: float,
    beta1: float,
    n_params: int,
) -> float:
    """Akaike information criterion, 2 * n_params - 2 * log L(k)."""

    if n_params < 0:
        raise ValueError("n_params must be non-negative")
    return 2.0 * n_params - 2.0 * log_likelihood(counts, k, alpha1, beta1)


def curve_diagnostics(curve: LikelihoodCurve) -> Dict[str, Any]:
    """Shape summary of a likelihood curve.

    Counts local maxima and reports the mean slope from each grid end to the
    maximum, which shows how much faster the curve falls beyond k-hat.
    """

    values = np.asarray(curve.loglik, dtype=float)
    grid = np.asarray(curve.grid, dtype=float)
    peaks = 0
    for i in range(values.size):
        left_ok = i == 0 or values[i] > values[i - 1]
        right_ok = i == values.size - 1 or values[i] >= values[i + 1]
        if left_ok and right_ok:
            peaks += 1
    best = curve.argmax_index
    left_slope = None
    right_slope = None
    if best > 0:
        left_slope = float((values[best] - values[0]) / (grid[best] - grid[0]))
    if best < values.size - 1:
        right_slope = float((values[-1] - values[best]) / (grid[-1] - grid[best]))
    return {
        "local_maxima": peaks,
        "unimodal": peaks == 1,
        "left_slope": left_slope,
        "right_slope": right_slope,
    }


def _refine(
    counts: Sequence[Optional[int]],
    grid: np.ndarray,
    best: int,
    alpha1: float,
    beta1: float,
) -> float:
    lower = float(grid[best - 1]) if best > 0 else float(grid[0]) / 2.0
    upper = float(grid[best + 1]) if best < grid.size - 1 else 1.0
    if upper <= lower:
        return float(grid[best])
    result = minimize_scalar(
        lambda k: -log_likelihood(counts, k, alpha1, beta1),
        bounds=(lower, upper),
        method="bounded",
        options={"xatol": 1e-6},
    )
    candidate = float(result.x)
    if -float(result.fun) >= log_likelihood(counts, float(grid[best]), alpha1, beta1):
        return candidate
    return float(grid[best])


def mle_k(
    counts: Sequence[Optional[int]],
    grid_size: int = DEFAULT_GRID_SIZE,
    alpha1: float = model_core.DEFAULT_ALPHA1,
    beta1: float = model_core.DEFAULT_BETA1,
    *,
    refine: bool = False,
    workers: int = 1,
) -> FitReport:
    """Grid-search maximum likelihood estimate of ``k``.

    The grid is k = j / grid_size for j = 1..grid_size, so k = 0 is excluded
    and the stationary model k = 1 is included. Ties go to the smaller k.
    """

    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    grid = np.arange(1, grid_size + 1, dtype=float) / grid_size
    values = _evaluate_grid(counts, grid, alpha1, beta1, workers)
    best = int(np.argmax(values))
    curve = LikelihoodCurve(
        grid=tuple(grid.tolist()), loglik=tuple(values.tolist()), argmax_index=best
    )

    shape = curve_diagnostics(curve)
    if not shape["unimodal"]:
        logger.warning(
            json.dumps({"event": "likelihood_not_unimodal", "local_maxima": shape["local_maxima"]})
        )

    k_hat = curve.k_max
    aic_proposed = aic(counts, k_hat, alpha1, beta1, PROPOSED_PARAMS)
    aic_stationary = aic(counts, 1.0, alpha1, beta1, STATIONARY_PARAMS)
    selected = Model.PROPOSED if aic_proposed < aic_stationary else Model.STATIONARY
    k_refined = _refine(counts, grid, best, alpha1, beta1) if refine else None

    return FitReport(
        k_hat=k_hat,
        curve=curve,
        aic_proposed=aic_proposed,
        aic_stationary=aic_stationary,
        selected=selected,
        n_observations=len(_observed(counts)),
        k_refined=k_refined,
    )


def compare_models(
    counts: Sequence[Optional[int]],
    alpha1: float = model_core.DEFAULT_ALPHA1,
    beta1: float = model_core.DEFAULT_BETA1,
    grid_size: int = DEFAULT_GRID_SIZE,
    *,
    refine: bool = False,
    workers: int = 1,
) -> FitReport:
    """Fit ``k`` and select between the discounted and stationary models by AIC."""

    report = mle_k(counts, grid_size, alpha1, beta1, refine=refine, workers=workers)
    logger.info(
        json.dumps(
            {
                "event": "fit",
                "n": report.n_observations,
                "k_hat": report.k_hat,
                "aic_proposed": round(report.aic_proposed, 6),
                "aic_stationary": round(report.aic_stationary, 6),
                "selected": report.selected.value,
            }
        )
    )
    return report
