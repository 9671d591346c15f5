"""Inter-arrival processes for traffic generation.

Two families are supported: Exponential (Poisson arrivals, rate lambda) and
Gamma (shape alpha, scale theta).  Gamma processes are usually built scaled
to a target mean, with theta = mean / alpha, so that changing alpha changes
only the variance (burstiness) of the traffic.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .errors import InsufficientDataError, ParameterError

# Generator identity recorded in every report so that runs can be reproduced
# bit-for-bit: Mersenne Twister uniforms, Marsaglia polar normals, and the
# Marsaglia-Tsang squeeze method for Gamma variates.
PRNG_ID = "mt19937/polar-normal/marsaglia-tsang"

EXPONENTIAL = "exponential"
GAMMA = "gamma"


@dataclass(frozen=True)
class ArrivalProcess:
    kind: str
    target_mean: float
    rate_lambda: float | None = None
    shape_alpha: float | None = None
    scale_theta: float | None = None

    def theoretical_mean(self) -> float:
        return self.target_mean

    def theoretical_variance(self) -> float:
        if self.kind == EXPONENTIAL:
            return 1.0 / (self.rate_lambda**2)
        return self.shape_alpha * self.scale_theta**2

    def to_dict(self) -> dict:
        if self.kind == EXPONENTIAL:
            return {"kind": EXPONENTIAL, "rate_lambda": self.rate_lambda}
        return {"kind": GAMMA, "shape_alpha": self.shape_alpha,
                "target_mean": self.target_mean}

    @staticmethod
    def from_dict(d: dict) -> "ArrivalProcess":
        if d["kind"] == EXPONENTIAL:
            return make_exponential(d["rate_lambda"])
        return make_gamma_scaled(d["shape_alpha"], d["target_mean"])


@dataclass(frozen=True)
class SampleStats:
    count: int
    mean: float
    variance: float


def make_exponential(rate_lambda: float) -> ArrivalProcess:
    """Exponential inter-arrivals with the given rate (per second)."""
    if rate_lambda <= 0:
        raise ParameterError(f"rate_lambda must be > 0, got {rate_lambda}")
    return ArrivalProcess(kind=EXPONENTIAL, target_mean=1.0 / rate_lambda,
                          rate_lambda=rate_lambda)


def make_gamma_scaled(shape_alpha: float, target_mean: float) -> ArrivalProcess:
    """Gamma inter-arrivals with the given shape, scaled to the target mean."""
    if shape_alpha <= 0:
        raise ParameterError(f"shape_alpha must be > 0, got {shape_alpha}")
    if target_mean <= 0:
        raise ParameterError(f"target_mean must be > 0, got {target_mean}")
    return ArrivalProcess(kind=GAMMA, target_mean=target_mean,
                          shape_alpha=shape_alpha,
                          scale_theta=target_mean / shape_alpha)


def _standard_normal(rng: random.Random) -> float:
    # Marsaglia polar method; explicit so the draw sequence is pinned to the
    # uniform stream (random.gauss caches state and is implementation-defined).
    while True:
        u = 2.0 * rng.random() - 1.0
        v = 2.0 * rng.random() - 1.0
        s = u * u + v * v
        if 0.0 < s < 1.0:
            return u * math.sqrt(-2.0 * math.log(s) / s)


def _gamma_variate(rng: random.Random, alpha: float) -> float:
    # Marsaglia-Tsang squeeze method; unit scale.
    if alpha < 1.0:
        # Boost: draw with shape alpha+1, multiply by U^(1/alpha).
        return _gamma_variate(rng, alpha + 1.0) * rng.random() ** (1.0 / alpha)
    d = alpha - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = _standard_normal(rng)
        t = 1.0 + c * x
        if t <= 0.0:
            continue
        v = t * t * t
        u = rng.random()
        if u < 1.0 - 0.0331 * x**4:
            return d * v
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v


def sample(process: ArrivalProcess, seed: int, n: int) -> list[float]:
    """Draw n inter-arrival gaps; a pure function of (process, seed, n)."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    rng = random.Random(seed)
    if process.kind == EXPONENTIAL:
        lam = process.rate_lambda
        return [-math.log(1.0 - rng.random()) / lam for _ in range(n)]
    alpha, theta = process.shape_alpha, process.scale_theta
    return [_gamma_variate(rng, alpha) * theta for _ in range(n)]


def empirical_stats(samples: list[float]) -> SampleStats:
    """Arithmetic mean and unbiased (n-1) sample variance."""
    n = len(samples)
    if n < 2:
        raise InsufficientDataError(f"need at least 2 samples, got {n}")
    mean = math.fsum(samples) / n
    variance = math.fsum((x - mean) ** 2 for x in samples) / (n - 1)
    return SampleStats(count=n, mean=mean, variance=variance)
