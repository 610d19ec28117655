"""Change-point accuracy metrics and reproducible simulation studies."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ChangePointSet
from .depth import DEFAULT_BASIS_SIZE, DEFAULT_PROJECTIONS, DepthMethod, compute_depth
from .detect import (
    Detector,
    NullMode,
    PeltConfig,
    amoc_null_statistics,
    amoc_test,
    epidemic_asymptotic_null,
    epidemic_null_statistics,
    epidemic_scan,
    epidemic_test,
    kolmogorov_sf,
    pelt_detect,
)
from .rankstat import RankVector, cusum_sup, ranks_from_scores
from .simgen import Scenario, build_scenario, effect_label, scenario_from_config

POWER_COLUMNS = ("scenario", "method", "n", "effect", "rate", "se")
PELT_COLUMNS = (
    "scenario", "lambda_prime", "n", "reps", "mean_abs_error", "mean_count_error",
    "failure_fraction", "mean_energy", "energy_count",
)
PELT_DETAIL_COLUMNS = ("scenario", "lambda_prime", "replicate", "ell", "ell_hat", "energy")


def _points(s) -> np.ndarray:
    pts = s.points if isinstance(s, ChangePointSet) else tuple(s)
    return np.asarray(pts, dtype=np.int64)


def energy_distance(est, truth) -> Optional[float]:
    """Energy distance between two change-point sets.

    ``2/(a b) sum|e_i - t_j| - 1/a^2 sum|e_i - e_j| - 1/b^2 sum|t_i - t_j|``
    with ``a = |est|`` and ``b = |truth|``.  Returns ``None`` when either set
    is empty, where the distance is undefined.
    """
    e = _points(est)
    t = _points(truth)
    a, b = e.shape[0], t.shape[0]
    if a == 0 or b == 0:
        return None
    cross = int(np.abs(e[:, None] - t[None, :]).sum())
    within_e = int(np.abs(e[:, None] - e[None, :]).sum())
    within_t = int(np.abs(t[:, None] - t[None, :]).sum())
    # one integer ratio keeps the value exactly symmetric and non-negative
    num = 2 * cross * a * b - within_e * b * b - within_t * a * a
    return num / (a * a * b * b)


@dataclass
class StudyReport:
    kind: str
    seed: int
    reps: int
    rows: list = field(default_factory=list)
    details: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def columns(self) -> tuple:
        return POWER_COLUMNS if self.kind == "power" else PELT_COLUMNS

    def to_csv(self) -> str:
        return _csv(self.columns, self.rows)

    def details_csv(self) -> str:
        return _csv(PELT_DETAIL_COLUMNS, self.details)

    def summary(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "reps": self.reps, "rows": self.rows, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def replicate_seeds(seed: int, count: int) -> list[int]:
    """Independent integer seeds for each replicate, fixed by ``seed`` and the index."""
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in np.random.SeedSequence(seed).spawn(count)]


def _map(fn, items, threads: Optional[int]):
    if threads is None or threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))  # results come back in input order


@dataclass(frozen=True)
class TestSpec:
    detector: Detector
    depth: DepthMethod
    min_gap: Optional[int] = None
    min_gap_fraction: Optional[float] = None

    __test__ = False

    def gap(self, n: int) -> int:
        if self.min_gap is not None:
            return int(self.min_gap)
        if self.min_gap_fraction is not None:
            return max(1, math.ceil(self.min_gap_fraction * n))
        return 2

    @property
    def label(self) -> str:
        return f"{self.detector.value}:{self.depth.value}"

    @classmethod
    def from_dict(cls, d: dict) -> "TestSpec":
        return cls(
            Detector(d.get("detector", "amoc")),
            DepthMethod(d["depth"]),
            d.get("min_gap"),
            d.get("min_gap_fraction"),
        )


class _NullCache:
    """Shared null distributions keyed by detector, n and window constraint.

    With distinct ranks the permutation null depends only on ``n``, so one
    reference sample serves every replicate.
    """

    def __init__(self, mode: NullMode, reps: int, seed: int):
        self.mode = mode
        self.reps = reps
        self.seed = seed
        self._store: dict = {}

    def get(self, detector: Detector, n: int, min_gap: int) -> np.ndarray:
        key = (detector, n, min_gap)
        if key not in self._store:
            if detector is Detector.AMOC:
                null = amoc_null_statistics(np.arange(1, n + 1), self.reps, self.seed)
            elif self.mode is NullMode.PERMUTATION:
                null = epidemic_null_statistics(np.arange(1, n + 1), min_gap, self.reps, self.seed)
            else:
                null = epidemic_asymptotic_null(n, min_gap, self.reps, self.seed)
            self._store[key] = null
        return self._store[key]


def replicate_p_value(ranks: RankVector, spec: TestSpec, nulls: _NullCache, seed: int) -> float:
    """p-value of one test, reusing the shared null when the ranks are distinct."""
    n = ranks.n
    gap = spec.gap(n)
    if spec.detector is Detector.AMOC:
        stat, _ = cusum_sup(ranks)
        if nulls.mode is NullMode.ASYMPTOTIC:
            return kolmogorov_sf(stat)
        if not ranks.distinct:
            return amoc_test(ranks, NullMode.PERMUTATION, nulls.reps, seed).p_value
    elif spec.detector is Detector.EPIDEMIC:
        stat = epidemic_scan(ranks, gap)[0]
        if nulls.mode is NullMode.PERMUTATION and not ranks.distinct:
            return epidemic_test(ranks, gap, NullMode.PERMUTATION, nulls.reps, seed).p_value
    else:
        raise ValueError("power studies cover the amoc and epidemic tests")
    null = nulls.get(spec.detector, n, gap)
    tol = 1e-9 * max(1.0, abs(stat))
    return (1 + int(np.sum(null >= stat - tol))) / (null.shape[0] + 1)


def _depth_kwargs(cfg: dict) -> dict:
    return {"M": int(cfg.get("m_projections", DEFAULT_PROJECTIONS)), "basis_size": int(cfg.get("basis_size", DEFAULT_BASIS_SIZE))}


def _scenarios(cfg: dict) -> list[Scenario]:
    items = cfg.get("scenarios")
    if not items:
        raise ValueError("study config needs a non-empty 'scenarios' list")
    return [scenario_from_config(d) for d in items]


def run_power_study(config: dict, seed: Optional[int] = None, threads: Optional[int] = None) -> StudyReport:
    """Rejection rates of each test on each scenario.

    Config keys: ``scenarios`` (list), ``tests`` (list of ``{detector, depth,
    min_gap | min_gap_fraction}``), ``reps``, ``alpha`` (0.05), ``null``
    (``permutation`` or ``asymptotic``), ``null_reps`` (1999), ``seed``.
    Every test sees the same simulated datasets.
    """
    seed = int(config.get("seed", 0) if seed is None else seed)
    reps = int(config.get("reps", 200))
    if reps < 1:
        raise ValueError("reps must be >= 1")
    alpha = float(config.get("alpha", 0.05))
    tests = [TestSpec.from_dict(t) for t in config.get("tests", [])]
    if not tests:
        raise ValueError("power study needs a non-empty 'tests' list")
    scenarios = _scenarios(config)
    nulls = _NullCache(NullMode(config.get("null", "permutation")), int(config.get("null_reps", 1999)), seed)
    dkw = _depth_kwargs(config)

    rows = []
    for si, sc in enumerate(scenarios):
        seeds = replicate_seeds(seed + 7919 * si, reps)
        for spec in tests:
            nulls.get(spec.detector, sc.n, spec.gap(sc.n))  # build once outside the workers

        def one(rep_seed):
            sample, _ = build_scenario(sc, seed=rep_seed)
            out = []
            for spec in tests:
                scores = compute_depth(sample, spec.depth, seed=rep_seed % (2**32), **dkw)
                p = replicate_p_value(ranks_from_scores(scores), spec, nulls, rep_seed % (2**32))
                out.append(p <= alpha)
            return out

        hits = np.array(_map(one, seeds, threads), dtype=bool).reshape(reps, len(tests))
        for j, spec in enumerate(tests):
            rate = float(hits[:, j].mean())
            rows.append({
                "scenario": sc.name or f"scenario{si}",
                "method": spec.label,
                "n": sc.n,
                "effect": effect_label(sc),
                "rate": rate,
                "se": math.sqrt(rate * (1.0 - rate) / reps),
            })
    return StudyReport("power", seed, reps, rows, [], config)


def run_pelt_study(config: dict, seed: Optional[int] = None, threads: Optional[int] = None) -> StudyReport:
    """Accuracy of penalised segmentation across a grid of ``lambda_prime`` values.

    Config keys: ``scenarios``, ``lambda_primes``, ``depth`` (``rp-deriv``),
    ``min_segment`` (2), ``reps``, ``seed``.  Depth ranks are computed once
    per dataset and reused for every penalty.
    """
    seed = int(config.get("seed", 0) if seed is None else seed)
    reps = int(config.get("reps", 200))
    if reps < 1:
        raise ValueError("reps must be >= 1")
    lambdas = [float(x) for x in config.get("lambda_primes", [0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4])]
    if not lambdas:
        raise ValueError("lambda_primes must be non-empty")
    method = DepthMethod(config.get("depth", "rp-deriv"))
    min_segment = int(config.get("min_segment", 2))
    scenarios = _scenarios(config)
    dkw = _depth_kwargs(config)

    rows, details = [], []
    for si, sc in enumerate(scenarios):
        name = sc.name or f"scenario{si}"
        seeds = replicate_seeds(seed + 7919 * si, reps)

        def one(rep_seed):
            sample, truth = build_scenario(sc, seed=rep_seed)
            ranks = ranks_from_scores(compute_depth(sample, method, seed=rep_seed % (2**32), **dkw))
            return truth, [pelt_detect(ranks, PeltConfig(lambda_prime=lp, min_segment=min_segment)) for lp in lambdas]

        results = _map(one, seeds, threads)
        for li, lp in enumerate(lambdas):
            errs, diffs, energies = [], [], []
            failures = 0
            for r, (truth, ests) in enumerate(results):
                est = ests[li]
                ell, ell_hat = len(truth), len(est)
                errs.append(abs(ell - ell_hat))
                diffs.append(ell_hat - ell)
                if ell > 0 and ell_hat == 0:
                    failures += 1
                ed = energy_distance(est, truth)
                if ed is not None:
                    energies.append(ed)
                details.append({"scenario": name, "lambda_prime": lp, "replicate": r,
                                "ell": ell, "ell_hat": ell_hat, "energy": ed})
            rows.append({
                "scenario": name,
                "lambda_prime": lp,
                "n": sc.n,
                "reps": reps,
                "mean_abs_error": float(np.mean(errs)),
                "mean_count_error": float(np.mean(diffs)),
                "failure_fraction": failures / reps,
                "mean_energy": float(np.mean(energies)) if energies else None,
                "energy_count": len(energies),
            })
    return StudyReport("pelt", seed, reps, rows, details, config)


def run_study(config: dict, seed: Optional[int] = None, threads: Optional[int] = None) -> StudyReport:
    kind = config.get("kind", "power")
    if kind == "power":
        return run_power_study(config, seed, threads)
    if kind == "pelt":
        return run_pelt_study(config, seed, threads)
    raise ValueError(f"unknown study kind {kind!r}; expected 'power' or 'pelt'")


def mean_abs_count_error(report: StudyReport, scenario: str) -> dict:
    """``{lambda_prime: mean |ell - ell_hat|}`` for one scenario of a PELT study."""
    return {r["lambda_prime"]: r["mean_abs_error"] for r in report.rows if r["scenario"] == scenario}


def rates(report: StudyReport) -> dict:
    """``{(scenario, method): rate}`` for a power study."""
    return {(r["scenario"], r["method"]): r["rate"] for r in report.rows}
