"""Depth ranks and the Kruskal-Wallis type change-point statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .core import ChangePointSet
from .depth import DepthScores


@dataclass(frozen=True)
class RankVector:
    """Counting ranks ``R_i = #{j : score_j <= score_i}``; ties share the maximal count."""

    ranks: np.ndarray

    @property
    def n(self) -> int:
        return self.ranks.shape[0]

    @property
    def distinct(self) -> bool:
        return np.unique(self.ranks).shape[0] == self.n

    def prefix(self) -> np.ndarray:
        """Integer prefix sums; ``prefix[k]`` is the sum of the first ``k`` ranks."""
        out = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(self.ranks, out=out[1:])
        return out


@dataclass(frozen=True)
class CusumProcess:
    n: int
    z: np.ndarray  # z[i-1] = Z_n(i / n), i = 1..n


def as_ranks(ranks) -> RankVector:
    if isinstance(ranks, RankVector):
        return ranks
    arr = np.asarray(ranks)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise ValueError("ranks must be a non-empty 1-D sequence")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise ValueError("ranks must be integers")
        arr = arr.astype(np.int64)
    if arr.min() < 1 or arr.max() > arr.shape[0]:
        raise ValueError("ranks must lie in [1, n]")
    return RankVector(arr.astype(np.int64))


def ranks_from_scores(scores) -> RankVector:
    values = scores.values if isinstance(scores, DepthScores) else np.asarray(scores, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] < 1:
        raise ValueError("need a non-empty 1-D score vector")
    if np.any(np.isnan(values)):
        raise ValueError("scores contain NaN")
    return RankVector(rankdata(values, method="max").astype(np.int64))


def _validate_cps(cps, n: int) -> ChangePointSet:
    if isinstance(cps, ChangePointSet):
        if cps.n != n:
            raise ValueError(f"change-point set is for n={cps.n}, ranks have n={n}")
        return cps
    return ChangePointSet(n, tuple(cps))


def kw_statistic(ranks, cps) -> float:
    """Kruskal-Wallis statistic of the segmentation induced by ``cps``."""
    rv = as_ranks(ranks)
    n = rv.n
    cps = _validate_cps(cps, n)
    prefix = rv.prefix()
    bounds = cps.boundaries()
    sums = (prefix[bounds[1:]] - prefix[bounds[:-1]]).astype(np.float64)
    lengths = np.diff(bounds).astype(np.float64)
    return float(12.0 / (n * (n + 1.0)) * np.sum(sums * sums / lengths) - 3.0 * (n + 1.0))


def cusum_process(ranks) -> CusumProcess:
    """Standardised Wilcoxon rank CUSUM evaluated at ``i / n``."""
    rv = as_ranks(ranks)
    n = rv.n
    if n < 2:
        raise ValueError("CUSUM needs n >= 2")
    # 2 * sum(R_i - (n+1)/2) is an exact integer
    twice = 2 * rv.prefix()[1:] - np.arange(1, n + 1, dtype=np.int64) * (n + 1)
    sigma = np.sqrt((n * n - 1.0) / 12.0)
    return CusumProcess(n, twice / (2.0 * np.sqrt(n) * sigma))


def cusum_sup(ranks) -> tuple[float, int]:
    """``(max_{1<=i<n} |Z_n(i/n)|, first maximising i)``."""
    rv = as_ranks(ranks)
    n = rv.n
    twice = np.abs(2 * rv.prefix()[1:n] - np.arange(1, n, dtype=np.int64) * (n + 1))
    k = int(np.argmax(twice))
    sigma = np.sqrt((n * n - 1.0) / 12.0)
    return float(twice[k] / (2.0 * np.sqrt(n) * sigma)), k + 1


def weighted_kw_argmax(ranks) -> tuple[float, int]:
    """Single split maximising the Kruskal-Wallis statistic (diagnostic).

    This is the CUSUM weighted by ``1 / (t (1 - t))``, so its maximiser can
    differ from the CUSUM estimate on finite samples.
    """
    rv = as_ranks(ranks)
    n = rv.n
    prefix = rv.prefix().astype(np.float64)
    k = np.arange(1, n)
    left = prefix[1:n]
    right = prefix[n] - left
    w = 12.0 / (n * (n + 1.0)) * (left**2 / k + right**2 / (n - k)) - 3.0 * (n + 1.0)
    i = int(np.argmax(w))
    return float(w[i]), i + 1


def _check_window(n: int, r1: int, r2: int) -> None:
    if not (1 <= r1 < r2 <= n):
        raise ValueError(f"window must satisfy 1 <= r1 < r2 <= n={n}, got ({r1}, {r2})")


def epidemic_statistic(ranks, r1: int, r2: int) -> float:
    """Epidemic statistic for the window of observations ``r1 .. r2-1``."""
    rv = as_ranks(ranks)
    n = rv.n
    _check_window(n, r1, r2)
    prefix = rv.prefix()
    inside = float(prefix[r2 - 1] - prefix[r1 - 1])
    outside = float(prefix[n]) - inside
    length = r2 - r1
    return 12.0 / (n * (n + 1.0)) * (outside**2 / (n - length) + inside**2 / length) - 3.0 * (n + 1.0)


def epidemic_statistic_centered(ranks, r1: int, r2: int) -> float:
    """Closed form ``q_n / (tau (1 - tau)) * Zwin^2`` valid for distinct ranks.

    ``Zwin`` is the standardised centred rank sum over the window and
    ``q_n = (n^2 - 1) / (n (n + 1))``.
    """
    rv = as_ranks(ranks)
    n = rv.n
    _check_window(n, r1, r2)
    window = rv.ranks[r1 - 1:r2 - 1].astype(np.float64)
    sigma = np.sqrt((n * n - 1.0) / 12.0)
    z = np.sum(window - (n + 1) / 2.0) / (np.sqrt(n) * sigma)
    tau = (r2 - r1) / n
    qn = (n * n - 1.0) / (n * (n + 1.0))
    return qn / (tau * (1.0 - tau)) * z * z
