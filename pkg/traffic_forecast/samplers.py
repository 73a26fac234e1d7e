"""Seed-deterministic Gamma, Beta and Poisson samplers.

All draws come from ``numpy.random.PCG64`` generators keyed by a
``SeedSequence``. A simulation asks for one generator per (seed, stream)
pair, so the variates used at a given tick never depend on how many
uniforms earlier ticks consumed.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from .model_core import DomainError

_SEED_LIMIT = 2 ** 64
# Poisson means at or above this use transformed rejection instead of inversion.
POISSON_INVERSION_LIMIT = 30.0
_TINY = np.finfo(float).tiny


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return the PCG64 generator for ``seed`` and the spawn key ``stream``."""

    if not 0 <= int(seed) < _SEED_LIMIT:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(sequence))


def _uniform_open(rng: np.random.Generator) -> float:
    """Uniform variate on (0, 1]."""

    return 1.0 - rng.random()


def log_standard_gamma(shape: float, rng: np.random.Generator) -> float:
    """Log of a Gamma(shape, 1) variate.

    Marsaglia and Tsang's squeeze-free rejection for shape >= 1; smaller
    shapes draw Gamma(shape + 1) and scale by U ** (1 / shape). Working in
    log space keeps tiny shapes from underflowing to zero.
    """

    if not shape > 0:
        raise DomainError(f"gamma shape must be positive, got {shape!r}")
    if shape < 1.0:
        return log_standard_gamma(shape + 1.0, rng) + math.log(_uniform_open(rng)) / shape
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        z = rng.standard_normal()
        v = 1.0 + c * z
        if v <= 0.0:
            continue
        v3 = v * v * v
        if math.log(_uniform_open(rng)) < 0.5 * z * z + d - d * v3 + d * math.log(v3):
            return math.log(d) + math.log(v3)


def sample_gamma(shape: float, rate: float, rng: np.random.Generator) -> float:
    """Gamma variate with the given shape and rate (mean shape / rate)."""

    if not rate > 0:
        raise DomainError(f"gamma rate must be positive, got {rate!r}")
    return max(math.exp(log_standard_gamma(shape, rng)) / rate, _TINY)


def sample_beta(a: float, b: float, rng: np.random.Generator) -> float:
    """Beta variate as X / (X + Y) for independent Gamma(a) and Gamma(b)."""

    if not (a > 0 and b > 0):
        raise DomainError(f"beta parameters must be positive, got ({a!r}, {b!r})")
    log_x = log_standard_gamma(a, rng)
    log_y = log_standard_gamma(b, rng)
    value = math.exp(log_x - float(np.logaddexp(log_x, log_y)))
    return min(max(value, _TINY), math.nextafter(1.0, 0.0))


def _poisson_inversion(mean: float, rng: np.random.Generator) -> int:
    u = rng.random()
    x = 0
    p = math.exp(-mean)
    cumulative = p
    while u > cumulative and p > 0.0:
        x += 1
        p *= mean / x
        cumulative += p
    return x


def _poisson_ptrs(mean: float, rng: np.random.Generator) -> int:
    """Hörmann's transformed rejection with squeeze."""

    slam = math.sqrt(mean)
    loglam = math.log(mean)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = rng.random() - 0.5
        v = rng.random()
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + mean + 0.43) if us > 0 else -1
        if us >= 0.07 and v <= vr:
            return int(k)
        if k < 0 or (us < 0.013 and v > us):
            continue
        if v <= 0.0:
            continue
        lhs = math.log(v) + math.log(inv_alpha) - math.log(a / (us * us) + b)
        rhs = -mean + k * loglam - float(gammaln(k + 1.0))
        if lhs <= rhs:
            return int(k)


def sample_poisson(mean: float, rng: np.random.Generator) -> int:
    """Poisson variate: inversion below a mean of 30, rejection above."""

    if not (mean >= 0 and math.isfinite(mean)):
        raise DomainError(f"poisson mean must be finite and non-negative, got {mean!r}")
    if mean == 0:
        return 0
    if mean < POISSON_INVERSION_LIMIT:
        return _poisson_inversion(mean, rng)
    return _poisson_ptrs(mean, rng)
