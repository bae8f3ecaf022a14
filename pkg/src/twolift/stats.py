"""Small statistical helpers: confidence intervals, compensated sums, seeding."""
from __future__ import annotations

import math
from typing import Iterable

import numpy as np


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def fsum_mean(values: Iterable[float]) -> float:
    vals = list(values)
    return math.fsum(vals) / len(vals) if vals else float("nan")


def mean_and_stderr(values) -> tuple[float, float]:
    """Order-independent mean (compensated) and standard error."""
    x = np.asarray(values, dtype=float)
    if len(x) == 0:
        return float("nan"), float("nan")
    m = math.fsum(x) / len(x)
    if len(x) < 2:
        return m, float("nan")
    var = math.fsum((x - m) ** 2) / (len(x) - 1)
    return m, math.sqrt(var / len(x))


def ratio_estimate(num, den) -> tuple[float, float]:
    """mean(num)/mean(den) with a delta-method standard error."""
    a = np.asarray(num, dtype=float)
    b = np.asarray(den, dtype=float)
    k = len(a)
    ma, mb = math.fsum(a) / k, math.fsum(b) / k
    if mb == 0:
        return float("nan"), float("nan")
    r = ma / mb
    resid = a - r * b
    var = math.fsum(resid ** 2) / (k - 1) if k > 1 else float("nan")
    return r, math.sqrt(var / k) / mb


def replica_seeds(seed: int, count: int) -> np.ndarray:
    """Independent 32-bit seeds for ``count`` replicas, fixed by ``seed`` alone."""
    ss = np.random.SeedSequence(seed)
    return np.array([c.generate_state(1, dtype=np.uint32)[0] for c in ss.spawn(count)], dtype=np.uint32)
