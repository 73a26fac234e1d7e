"""Discounted Poisson-Gamma filter for per-interval request counts.

The filter keeps a Gamma(alpha, beta) belief over the arrival rate of the
next interval. Each observed count is absorbed by the conjugate update and
the resulting parameters are shrunk by the discount constant ``k``; with
``k == 1`` the filter is the ordinary stationary Poisson-Gamma model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

DEFAULT_ALPHA1 = 0.5
DEFAULT_BETA1 = 1.0

# Quantile scans stop at mean + _QUANTILE_SPREAD standard deviations.
_QUANTILE_SPREAD = 50.0
# Cumulative sums within this distance of the level count as reaching it.
_CDF_TOLERANCE = 1e-12
# Shapes decay as k**t over runs of zero counts; they are floored here instead
# of underflowing to zero.
SHAPE_FLOOR = float(np.finfo(float).tiny)


class DomainError(ValueError):
    """Raised when a parameter, count or level is outside the model domain."""


@dataclass(frozen=True)
class GammaState:
    """Sufficient statistics of the rate belief after ``t`` observations."""

    alpha: float
    beta: float
    k: float
    t: int = 0

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise DomainError(f"alpha must be positive and finite, got {self.alpha!r}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise DomainError(f"beta must be positive and finite, got {self.beta!r}")
        check_k(self.k)
        if self.t < 0:
            raise DomainError(f"t must be non-negative, got {self.t!r}")


@dataclass(frozen=True)
class PredictiveDist:
    """Negative binomial distribution of the next count.

    ``r`` is the number of successes and ``p`` the success probability, so the
    mean is ``r * (1 - p) / p``.
    """

    r: float
    p: float

    @property
    def mean(self) -> float:
        return self.r * (1.0 - self.p) / self.p

    @property
    def variance(self) -> float:
        return self.r * (1.0 - self.p) / (self.p * self.p)


def check_k(k: float) -> float:
    """Return ``k`` as a float or raise :class:`DomainError` if outside (0, 1]."""

    value = float(k)
    if not (0.0 < value <= 1.0):
        raise DomainError(f"k must satisfy 0 < k <= 1, got {k!r}")
    return value


def check_count(x: object) -> int:
    """Return ``x`` as a non-negative integer count."""

    if isinstance(x, bool):
        raise DomainError("counts must be integers, not booleans")
    try:
        value = int(x)  # type: ignore[call-overload]
    except (TypeError, ValueError):
        raise DomainError(f"count must be a non-negative integer, got {x!r}") from None
    if value != x or value < 0:
        raise DomainError(f"count must be a non-negative integer, got {x!r}")
    return value


def check_level(level: float) -> float:
    value = float(level)
    if not (0.0 < value < 1.0):
        raise DomainError(f"level must satisfy 0 < level < 1, got {level!r}")
    return value


def initial_state(
    alpha1: float = DEFAULT_ALPHA1, beta1: float = DEFAULT_BETA1, k: float = 1.0
) -> GammaState:
    """Return the prior state (alpha1, beta1) with no observations absorbed."""

    return GammaState(float(alpha1), float(beta1), check_k(k), 0)


def log_gamma(x: float) -> float:
    """Return ln Gamma(x) for ``x > 0``."""

    if not x > 0:
        raise DomainError(f"log_gamma is defined for x > 0, got {x!r}")
    return float(gammaln(x))


def posterior_update(state: GammaState, x: int) -> GammaState:
    """Absorb one count with the conjugate Bayes update; no decay applied."""

    count = check_count(x)
    return GammaState(state.alpha + count, state.beta + 1.0, state.k, state.t)


def discount_step(state: GammaState, x: int) -> GammaState:
    """One tick of the filter: Bayes update followed by the power discount."""

    count = check_count(x)
    k = state.k
    return GammaState(
        max(k * (state.alpha + count), SHAPE_FLOOR), k * (state.beta + 1.0), k, state.t + 1
    )


def state_from_history(
    counts: Sequence[int], alpha1: float, beta1: float, k: float
) -> GammaState:
    """Return the filter state after ``counts`` in closed form.

    alpha = k^t alpha1 + sum_i k^(t+1-i) x_i and
    beta = k^t beta1 + sum_i k^i, accumulated newest-first so every weight
    is one multiplication away from the previous one.
    """

    k = check_k(k)
    values = [check_count(x) for x in counts]
    prior = initial_state(alpha1, beta1, k)
    weight = 1.0
    alpha_sum = 0.0
    beta_sum = 0.0
    for x in reversed(values):
        weight *= k
        alpha_sum += weight * x
        beta_sum += weight
    return GammaState(
        max(weight * prior.alpha + alpha_sum, SHAPE_FLOOR),
        weight * prior.beta + beta_sum,
        k,
        len(values),
    )


def point_forecast(state: GammaState) -> float:
    """Bayes-optimal forecast of the next count under squared-error loss."""

    return state.alpha / state.beta


def predictive_dist(state: GammaState) -> PredictiveDist:
    return PredictiveDist(r=state.alpha, p=state.beta / (state.beta + 1.0))


def predictive_variance(state: GammaState) -> float:
    return state.alpha * (state.beta + 1.0) / (state.beta * state.beta)


def predictive_logpmf(alpha, beta, x):
    """Vectorised log of the negative binomial predictive probability.

    ``alpha``, ``beta`` and ``x`` broadcast against each other; no validation
    is done here, callers pass checked values.
    """

    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    return (
        -alpha * np.log1p(1.0 / beta)
        - x * np.log1p(beta)
        + gammaln(alpha + x)
        - gammaln(alpha)
        - gammaln(x + 1.0)
    )


def predictive_log_pmf(state: GammaState, x: int) -> float:
    """Return ln p(x | state), the log-score of an observed count."""

    count = check_count(x)
    return float(predictive_logpmf(state.alpha, state.beta, count))


def predictive_pmf(state: GammaState, x: int) -> float:
    """Probability that the next interval carries ``x`` arrivals."""

    return min(1.0, math.exp(predictive_log_pmf(state, x)))


def _quantile_cap(state: GammaState) -> int:
    spread = _QUANTILE_SPREAD * math.sqrt(predictive_variance(state))
    return int(math.ceil(point_forecast(state) + spread)) + 1


def predictive_quantiles(state: GammaState, levels: Iterable[float]) -> Tuple[int, ...]:
    """Return the one-sided upper predictive limit for each level.

    The cumulative pmf is scanned from zero up to mean + 50 standard
    deviations; a level that is not reached by then returns the cap.
    """

    checked = [check_level(level) for level in levels]
    if not checked:
        return ()
    cap = _quantile_cap(state)
    support = np.arange(cap + 1, dtype=float)
    cdf = np.cumsum(np.exp(predictive_logpmf(state.alpha, state.beta, support)))
    results = []
    for level in checked:
        index = int(np.searchsorted(cdf, level - _CDF_TOLERANCE, side="left"))
        results.append(min(index, cap))
    return tuple(results)


def predictive_quantile(state: GammaState, level: float) -> int:
    """Smallest count q with P(x <= q) >= ``level``."""

    return predictive_quantiles(state, (level,))[0]


def u_variance(state: GammaState) -> float:
    """Variance of the Beta shock that drives the rate between ticks."""

    return state.k * (1.0 - state.k) / (state.alpha + 1.0)


def fold(
    counts: Iterable[Optional[int]], state: GammaState
) -> GammaState:
    """Run ``discount_step`` over ``counts``; ``None`` marks a missing interval."""

    for x in counts:
        if x is None:
            continue
        state = discount_step(state, x)
    return state
