"""FKWC detectors: AMOC test, epidemic test and penalised multiple change-point search."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .core import ChangePointSet, FunctionalSample
from .depth import (
    DEFAULT_BASIS_SIZE,
    DEFAULT_PROJECTIONS,
    DEFAULT_TUKEY_DIRECTIONS,
    DepthMethod,
    compute_depth,
)
from .rankstat import RankVector, as_ranks, cusum_sup, epidemic_statistic, kw_statistic, ranks_from_scores, weighted_kw_argmax

PENALTY_INTERCEPT = 3.74
PERM_CHUNK = 128


class NullMode(str, enum.Enum):
    ASYMPTOTIC = "asymptotic"
    PERMUTATION = "permutation"


class Detector(str, enum.Enum):
    AMOC = "amoc"
    EPIDEMIC = "epidemic"
    PELT = "pelt"


@dataclass
class TestResult:
    method: str
    statistic: float
    p_value: Optional[float]
    estimates: ChangePointSet
    null_mode: Optional[str] = None
    reps: Optional[int] = None
    seed: Optional[int] = None
    extra: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "changepoints": list(self.estimates.points),
            "n": self.estimates.n,
            "null_mode": self.null_mode,
            "reps": self.reps,
            "seed": self.seed,
        }
        out.update(self.extra)
        return out


@dataclass(frozen=True)
class PeltConfig:
    lambda_prime: float = 0.3
    lam: Optional[float] = None
    min_segment: int = 2
    pruning: str = "functional"

    def __post_init__(self):
        if self.min_segment < 1:
            raise ValueError("min_segment must be >= 1")
        if self.lam is not None and self.lam <= 0:
            raise ValueError("penalty must be positive")
        if self.pruning not in ("functional", "inequality"):
            raise ValueError("pruning must be 'functional' or 'inequality'")

    def penalty(self, n: int) -> float:
        lam = self.lam if self.lam is not None else PENALTY_INTERCEPT + self.lambda_prime * math.sqrt(n)
        if lam <= 0:
            raise ValueError(f"penalty must be positive, got {lam}")
        return lam


def kolmogorov_sf(x: float) -> float:
    """P(sup_t |B(t)| > x) for a standard Brownian bridge."""
    if x <= 0:
        return 1.0
    if x < 1.0:
        # Jacobi-theta form converges fast for small x.
        total = 0.0
        k = 1
        while True:
            term = math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8.0 * x * x))
            total += term
            if term < 1e-17:
                break
            k += 1
        return 1.0 - math.sqrt(2.0 * math.pi) / x * total
    total = 0.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * x * x)
        if term < 1e-12:
            break
        total += term if k % 2 == 1 else -term
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def kolmogorov_cdf(x: float) -> float:
    return 1.0 - kolmogorov_sf(x)


def kolmogorov_quantile(alpha: float) -> float:
    """Smallest ``x`` with ``P(sup|B| > x) = alpha``."""
    return brentq(lambda x: kolmogorov_sf(x) - alpha, 0.2, 10.0, xtol=1e-12)


def permutation_batches(ranks: np.ndarray, reps: int, seed: int, chunk: int = PERM_CHUNK):
    """Yield blocks of random permutations of ``ranks``.

    Block ``b`` draws from its own stream spawned from ``seed``, so the
    sequence is reproducible and independent of how blocks are scheduled.
    """
    root = np.random.SeedSequence(seed)
    n_blocks = (reps + chunk - 1) // chunk
    for b, child in enumerate(root.spawn(n_blocks)):
        size = min(chunk, reps - b * chunk)
        rng = np.random.default_rng(child)
        yield rng.permuted(np.tile(ranks, (size, 1)), axis=1)


def _amoc_twice(perms: np.ndarray) -> np.ndarray:
    n = perms.shape[1]
    twice = 2 * np.cumsum(perms[:, : n - 1], axis=1) - np.arange(1, n, dtype=np.int64) * (n + 1)
    return np.abs(twice).max(axis=1)


def amoc_null_statistics(ranks, reps: int, seed: int) -> np.ndarray:
    """sup|Z_n| recomputed on ``reps`` random permutations of ``ranks``."""
    r = as_ranks(ranks).ranks
    n = r.shape[0]
    scale = 2.0 * math.sqrt(n) * math.sqrt((n * n - 1.0) / 12.0)
    parts = [_amoc_twice(p) for p in permutation_batches(r, reps, seed)]
    return np.concatenate(parts) / scale


def _mode(null_mode) -> NullMode:
    return NullMode(null_mode)


def amoc_test(ranks, null_mode=NullMode.PERMUTATION, reps: int = 999, seed: int = 0) -> TestResult:
    """At-most-one-change test on the Wilcoxon rank CUSUM."""
    rv = as_ranks(ranks)
    n = rv.n
    if n < 4:
        raise ValueError("AMOC test needs n >= 4")
    mode = _mode(null_mode)
    stat, khat = cusum_sup(rv)
    kw_stat, kw_k = weighted_kw_argmax(rv)
    extra = {"kw_argmax": kw_k, "kw_max": kw_stat}
    if mode is NullMode.ASYMPTOTIC:
        return TestResult(Detector.AMOC.value, stat, kolmogorov_sf(stat), ChangePointSet(n, (khat,)),
                          mode.value, None, None, extra)
    if reps < 1:
        raise ValueError("permutation mode needs reps >= 1")
    r = rv.ranks
    obs_twice = int(np.abs(2 * rv.prefix()[1:n] - np.arange(1, n, dtype=np.int64) * (n + 1)).max())
    exceed = sum(int(np.sum(_amoc_twice(p) >= obs_twice)) for p in permutation_batches(r, reps, seed))
    p = (1 + exceed) / (reps + 1)
    return TestResult(Detector.AMOC.value, stat, p, ChangePointSet(n, (khat,)), mode.value, reps, seed, extra)


def _check_epidemic(n: int, min_gap: int) -> None:
    if n < 6:
        raise ValueError("epidemic test needs n >= 6")
    if not (1 <= min_gap <= n - 2):
        raise ValueError(f"min_gap must be in [1, n-2], got {min_gap}")


def epidemic_scan(ranks, min_gap: int = 2) -> tuple[float, int, int]:
    """``(max W_n(r1, r2), r1, r2)`` over windows with ``r2 - r1 >= min_gap``."""
    rv = as_ranks(ranks)
    return _kernels.epidemic_scan(rv.prefix().astype(np.float64), int(min_gap))


def epidemic_null_statistics(ranks, min_gap: int, reps: int, seed: int) -> np.ndarray:
    r = as_ranks(ranks).ranks
    parts = [_kernels.epidemic_null(p.astype(np.float64), int(min_gap)) for p in permutation_batches(r, reps, seed)]
    return np.concatenate(parts)


def bridge_paths(n: int, reps: int, seed: int) -> np.ndarray:
    """Brownian bridge values at ``i/n``, ``i = 0..n``, one path per row."""
    rng = np.random.default_rng(seed)
    steps = rng.standard_normal((reps, n)) / math.sqrt(n)
    walk = np.zeros((reps, n + 1))
    np.cumsum(steps, axis=1, out=walk[:, 1:])
    t = np.arange(n + 1) / n
    return walk - t * walk[:, -1:]


def epidemic_asymptotic_null(n: int, min_gap: int, reps: int, seed: int) -> np.ndarray:
    out = []
    for b, child in enumerate(np.random.SeedSequence(seed).spawn((reps + PERM_CHUNK - 1) // PERM_CHUNK)):
        size = min(PERM_CHUNK, reps - b * PERM_CHUNK)
        paths = bridge_paths(n, size, int(child.generate_state(1)[0]))
        out.append(_kernels.bridge_window_sup(paths, int(min_gap)))
    return np.concatenate(out)


def epidemic_test(ranks, min_gap: int = 2, null_mode=NullMode.PERMUTATION, reps: int = 999, seed: int = 0) -> TestResult:
    """Epidemic-period test: two change-points with matching outer segments."""
    rv = as_ranks(ranks)
    n = rv.n
    _check_epidemic(n, min_gap)
    mode = _mode(null_mode)
    if reps < 1:
        raise ValueError("reps must be >= 1")
    stat, r1, r2 = epidemic_scan(rv, min_gap)
    # window r1..r2-1 means change-points after r1-1 and after r2-1
    pts = tuple(k for k in (r1 - 1, r2 - 1) if 0 < k < n)
    if mode is NullMode.PERMUTATION:
        null = epidemic_null_statistics(rv, min_gap, reps, seed)
    else:
        null = epidemic_asymptotic_null(n, min_gap, reps, seed)
    tol = 1e-9 * max(1.0, abs(stat))
    p = (1 + int(np.sum(null >= stat - tol))) / (reps + 1)
    extra = {"min_gap": min_gap, "window": [int(r1), int(r2)]}
    return TestResult(Detector.EPIDEMIC.value, float(stat), p, ChangePointSet(n, pts), mode.value, reps, seed, extra)


def pelt_detect(ranks, config: PeltConfig = PeltConfig()) -> ChangePointSet:
    """Maximise the Kruskal-Wallis objective minus ``lambda`` per change-point."""
    rv = as_ranks(ranks)
    n = rv.n
    if n < 2 * config.min_segment:
        raise ValueError(f"need n >= 2 * min_segment = {2 * config.min_segment}")
    lam = config.penalty(n)
    pts, _ = _kernels.pelt(rv.ranks.astype(np.float64), float(lam), int(config.min_segment),
                           config.pruning == "functional")
    return ChangePointSet(n, tuple(int(k) for k in pts))


def pelt_work(ranks, config: PeltConfig = PeltConfig()) -> int:
    """Number of candidate evaluations PELT performs (a pruning diagnostic)."""
    rv = as_ranks(ranks)
    lam = config.penalty(rv.n)
    _, work = _kernels.pelt(rv.ranks.astype(np.float64), float(lam), int(config.min_segment),
                            config.pruning == "functional")
    return int(work)


def pelt_result(ranks, config: PeltConfig = PeltConfig()) -> TestResult:
    rv = as_ranks(ranks)
    cps = pelt_detect(rv, config)
    lam = config.penalty(rv.n)
    objective = kw_statistic(rv, cps) - len(cps) * lam
    extra = {"lambda": lam, "lambda_prime": config.lambda_prime, "min_segment": config.min_segment}
    return TestResult(Detector.PELT.value, objective, None, cps, None, None, None, extra)


def epidemic_critical_value(
    n: int,
    min_gap: int = 2,
    alpha: float = 0.05,
    reps: int = 999,
    seed: int = 0,
    cache_path=None,
) -> float:
    """Upper ``alpha`` quantile of the permutation null of the epidemic statistic.

    With ``cache_path`` the value is looked up in (or appended to) a JSON list
    of ``{n, min_gap, alpha, quantile, reps, seed}`` records.
    """
    _check_epidemic(n, min_gap)
    key = {"n": int(n), "min_gap": int(min_gap), "alpha": float(alpha), "reps": int(reps), "seed": int(seed)}
    table = []
    if cache_path is not None and Path(cache_path).exists():
        table = json.loads(Path(cache_path).read_text())
        for row in table:
            if all(row.get(k) == v for k, v in key.items()):
                return float(row["quantile"])
    null = epidemic_null_statistics(np.arange(1, n + 1), min_gap, reps, seed)
    q = float(np.quantile(null, 1.0 - alpha, method="higher"))
    if cache_path is not None:
        table.append({**key, "quantile": q})
        Path(cache_path).write_text(json.dumps(table, indent=2, sort_keys=True))
    return q


@dataclass
class DetectOptions:
    M: int = DEFAULT_PROJECTIONS
    basis_size: int = DEFAULT_BASIS_SIZE
    tukey_directions: int = DEFAULT_TUKEY_DIRECTIONS
    seed: int = 0
    null_mode: str = NullMode.PERMUTATION.value
    reps: int = 999
    min_gap: int = 2
    lambda_prime: float = 0.3
    lam: Optional[float] = None
    min_segment: int = 2
    center: bool = False


def run_detector(ranks: RankVector, detector, options: DetectOptions) -> TestResult:
    detector = Detector(detector)
    if detector is Detector.AMOC:
        return amoc_test(ranks, options.null_mode, options.reps, options.seed)
    if detector is Detector.EPIDEMIC:
        return epidemic_test(ranks, options.min_gap, options.null_mode, options.reps, options.seed)
    cfg = PeltConfig(options.lambda_prime, options.lam, options.min_segment)
    return pelt_result(ranks, cfg)


def detect_pipeline(sample: FunctionalSample, depth_method, detector, options: Optional[DetectOptions] = None) -> TestResult:
    """Depth scores, then ranks, then the chosen detector."""
    options = options or DetectOptions()
    if options.center:
        sample = sample.centered()
    scores = compute_depth(
        sample,
        depth_method,
        M=options.M,
        basis_size=options.basis_size,
        tukey_directions=options.tukey_directions,
        seed=options.seed,
    )
    ranks = ranks_from_scores(scores)
    result = run_detector(ranks, detector, options)
    result.seed = options.seed
    result.extra = {"depth": DepthMethod(depth_method).value, **result.extra, "params": asdict(options)}
    return result
