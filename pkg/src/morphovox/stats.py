"""Bootstrap intervals, the Mann-Whitney rank-sum test and Bonferroni."""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np

from .errors import DomainError

EXACT_LIMIT = 12


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def bootstrap_ci(sample: Sequence[float], level: float = 0.99, resamples: int = 5000,
                 rng=None) -> tuple:
    """Percentile bootstrap interval for the mean."""
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise DomainError("bootstrap needs a non-empty sample")
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    idx = _rng(rng).integers(0, x.size, size=(resamples, x.size))
    means = x[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def midranks(values: Sequence[float]) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _u_from_ranks(ranks_x, nx) -> float:
    return float(np.sum(ranks_x) - nx * (nx + 1) / 2)


def exact_rank_sum_p(ranks: np.ndarray, nx: int, u_obs: float) -> float:
    """Two-sided p by enumerating every split of the pooled ranks."""
    n = ranks.size
    centre = nx * (n - nx) / 2
    dev = abs(u_obs - centre)
    hits = total = 0
    for combo in itertools.combinations(range(n), nx):
        u = _u_from_ranks(ranks[list(combo)], nx)
        total += 1
        if abs(u - centre) >= dev - 1e-9:
            hits += 1
    return hits / total


def normal_rank_sum_p(ranks: np.ndarray, nx: int, u_obs: float) -> float:
    n = ranks.size
    ny = n - nx
    _, counts = np.unique(ranks, return_counts=True)
    ties = float(np.sum(counts**3 - counts))
    var = nx * ny / 12.0 * ((n + 1) - ties / (n * (n - 1)))
    if var <= 0:
        return 1.0
    z = max(0.0, abs(u_obs - nx * ny / 2) - 0.5) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2)))


def rank_sum_test(x: Sequence[float], y: Sequence[float], method: str = "auto") -> tuple:
    """Mann-Whitney U of ``x`` against ``y`` and its two-sided p-value.

    ``method`` is ``"exact"``, ``"normal"`` or ``"auto"`` (exact when the
    pooled size is at most 12).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise DomainError("rank-sum test needs two non-empty samples")
    if method not in ("auto", "exact", "normal"):
        raise DomainError(f"unknown method {method!r}")
    ranks = midranks(np.concatenate([x, y]))
    u = _u_from_ranks(ranks[: x.size], x.size)
    exact = method == "exact" or (method == "auto" and x.size + y.size <= EXACT_LIMIT)
    p = exact_rank_sum_p(ranks, x.size, u) if exact else normal_rank_sum_p(ranks, x.size, u)
    return u, p


def bonferroni(p: float, m: int = 9) -> float:
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p-value {p} outside [0, 1]")
    if m < 1:
        raise DomainError("number of comparisons must be at least 1")
    return min(1.0, m * p)
