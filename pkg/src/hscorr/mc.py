"""Monte Carlo estimate container and seeded stream helpers."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class MCEstimate:
    """Sample mean of an integrand over a box of known measure.

    ``mean`` and ``stderr`` refer to the per-sample average; the integral
    estimate is ``mean * volume``.
    """

    mean: float
    stderr: float
    n: int
    volume: float = 1.0

    @property
    def value(self) -> float:
        return self.mean * self.volume

    @property
    def value_stderr(self) -> float:
        return self.stderr * self.volume

    @classmethod
    def from_samples(cls, values, volume: float = 1.0) -> "MCEstimate":
        values = np.asarray(values, dtype=float)
        n = values.size
        if n == 0:
            raise ValueError("cannot form an estimate from zero samples")
        mean = float(values.mean())
        se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(mean, se, n, volume)

    @classmethod
    def from_counts(cls, hits: int, n: int, volume: float = 1.0) -> "MCEstimate":
        if n <= 0:
            raise ValueError("n must be positive")
        p = hits / n
        return cls(p, math.sqrt(p * (1.0 - p) / n), n, volume)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["value"] = self.value
        out["value_stderr"] = self.value_stderr
        return out


def combine_means(parts: list[tuple[float, float, int]]) -> tuple[float, float, int]:
    """Merge (sum, sum_of_squares, count) accumulators."""
    s = sum(p[0] for p in parts)
    ss = sum(p[1] for p in parts)
    n = sum(p[2] for p in parts)
    return s, ss, n


def estimate_from_moments(s: float, ss: float, n: int, volume: float = 1.0) -> MCEstimate:
    mean = s / n
    var = max(ss / n - mean * mean, 0.0) * n / max(n - 1, 1)
    return MCEstimate(mean, math.sqrt(var / n), n, volume)


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # the endpoints are exact at the extremes; avoid rounding just inside them
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


def chunk_sizes(n: int, chunk: int) -> list[int]:
    sizes = [chunk] * (n // chunk)
    if n % chunk:
        sizes.append(n % chunk)
    return sizes


def spawn_generators(seed, count: int) -> list[np.random.Generator]:
    """Independent generators derived from one seed; deterministic per (seed, count)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in ss.spawn(count)]
