"""Rank statistics for comparing agent variants.

Mann-Whitney U is computed from midrank sums. For small tie-free samples
(min size <= 8) the p-value comes from exact enumeration of the U null
distribution; otherwise from the normal approximation with tie-corrected
variance and a continuity correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

EXACT_MAX_MIN_N = 8


@dataclass(frozen=True)
class SampleSet:
    label: str
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError(f"sample set {self.label!r} is empty")


def summarize(values) -> tuple[float, float, int]:
    """(mean, standard error of the mean, n). SE is 0 for a single value."""
    vals = np.asarray(list(values), dtype=float)
    if vals.size == 0:
        raise ValueError("cannot summarize an empty sample")
    if vals.size == 1:
        return float(vals[0]), 0.0, 1
    se = float(np.std(vals, ddof=1) / math.sqrt(vals.size))
    return float(np.mean(vals)), se, int(vals.size)


def _midranks(pooled: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; tied values share the mean of their rank span."""
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(len(pooled))
    i = 0
    while i < len(pooled):
        j = i
        while j + 1 < len(pooled) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


@lru_cache(maxsize=256)
def _exact_u_counts(n1: int, n2: int) -> tuple[int, ...]:
    """counts[u] = number of arrangements of n1 + n2 distinct values giving
    U = u for the first sample. Walks the pooled order smallest-first; placing
    an x after j y's contributes j to U."""
    max_u = n1 * n2
    # dp[j] = polynomial over u for "i x's placed, j y's placed"
    dp = [[np.zeros(max_u + 1, dtype=object) for _ in range(n2 + 1)]
          for _ in range(n1 + 1)]
    dp[0][0][0] = 1
    for i in range(n1 + 1):
        for j in range(n2 + 1):
            here = dp[i][j]
            if not here.any():
                continue
            if i < n1:  # next pooled value is an x: adds j pairs y < x
                dp[i + 1][j][j:] += here[:max_u + 1 - j]
            if j < n2:  # next pooled value is a y
                dp[i][j + 1] += here
    return tuple(int(v) for v in dp[n1][n2])


def _exact_p(u: float, n1: int, n2: int, alternative: str) -> float:
    counts = _exact_u_counts(n1, n2)
    total = sum(counts)
    le = sum(counts[:int(math.floor(u)) + 1])
    ge = sum(counts[int(math.ceil(u)):])
    if alternative == "greater":
        return ge / total
    if alternative == "less":
        return le / total
    return min(1.0, 2.0 * min(le, ge) / total)


def _approx_p(u: float, n1: int, n2: int, tie_term: float,
              alternative: str) -> float:
    n = n1 + n2
    mean_u = n1 * n2 / 2.0
    var_u = (n1 * n2 / 12.0) * ((n + 1) - tie_term / (n * (n - 1)))
    if var_u <= 0:
        return 1.0
    sd = math.sqrt(var_u)
    if alternative == "two-sided":
        z = max(0.0, abs(u - mean_u) - 0.5) / sd
        return min(1.0, 2.0 * _normal_sf(z))
    if alternative == "greater":
        z = (u - mean_u - 0.5) / sd
    else:
        z = (mean_u - u - 0.5) / sd
    return _normal_sf(z)


def mann_whitney_u(x, y, alternative: str = "two-sided") -> tuple[float, float]:
    """U statistic of the first sample and its p-value.

    ``alternative='greater'`` tests whether x is stochastically larger than y.
    Identical constant samples give p = 1.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    xs = np.asarray(list(x), dtype=float)
    ys = np.asarray(list(y), dtype=float)
    if xs.size == 0 or ys.size == 0:
        raise ValueError("both samples must be non-empty")
    n1, n2 = int(xs.size), int(ys.size)
    pooled = np.concatenate([xs, ys])
    ranks = _midranks(pooled)
    u = float(np.sum(ranks[:n1]) - n1 * (n1 + 1) / 2.0)

    _, tie_counts = np.unique(pooled, return_counts=True)
    has_ties = bool(np.any(tie_counts > 1))
    if len(tie_counts) == 1:  # every value identical in both samples
        return u, 1.0
    if not has_ties and min(n1, n2) <= EXACT_MAX_MIN_N:
        return u, _exact_p(u, n1, n2, alternative)
    tie_term = float(np.sum(tie_counts.astype(float) ** 3 - tie_counts))
    return u, _approx_p(u, n1, n2, tie_term, alternative)


def compare_sample_sets(x: SampleSet, y: SampleSet) -> dict:
    """One comparison-report row: labels, means, U and two-sided p."""
    u, p = mann_whitney_u(x.values, y.values)
    return {
        "label_a": x.label,
        "label_b": y.label,
        "mean_a": summarize(x.values)[0],
        "mean_b": summarize(y.values)[0],
        "U": u,
        "p": p,
    }
