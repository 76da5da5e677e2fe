"""Small statistical helpers shared by the experiments."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n > 0 else float("inf")


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


def fraction_report(flags, label: str = "success") -> dict:
    flags = np.asarray(flags, dtype=bool)
    n, k = flags.size, int(flags.sum())
    lo, hi = wilson_interval(k, n)
    return {"n": n, label: k, "fraction": k / n if n else float("nan"),
            "ci95": [lo, hi]}


def ks_uniform(sample) -> tuple[float, float]:
    res = stats.kstest(np.asarray(sample, dtype=float), "uniform")
    return float(res.statistic), float(res.pvalue)
