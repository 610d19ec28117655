"""Synthetic functional samples with planted covariance change-points.

Curves are drawn on a uniform 1-D grid from a squared-exponential kernel
``beta * exp(-(s - t)^2 / (2 alpha^2))``; ``alpha`` changes alter the shape
(smoothness) of the curves, ``beta`` changes their magnitude.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ChangePointSet, FunctionalSample, Grid

DEFAULT_GRID_SIZE = 100
DEFAULT_SKEW_SHAPE = 4.0
JITTER = 1e-10
JITTER_RETRIES = 3
MIN_GAP_FRACTION = 0.1

BASE_ALPHA = 0.2
BASE_BETA = 1.0


class Distribution(str, enum.Enum):
    GAUSS = "gauss"
    T3 = "t3"
    SKEW_GAUSS = "skew-gauss"


class Layout(str, enum.Enum):
    NONE = "none"
    AMOC = "amoc"
    EPIDEMIC = "epidemic"
    FIVE_ASCENDING = "five-ascending"
    FIVE_ALTERNATING = "five-alternating"

    @property
    def n_segments(self) -> int:
        return {"none": 1, "amoc": 2, "epidemic": 3}.get(self.value, 6)


@dataclass(frozen=True)
class KernelSpec:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"kernel needs alpha > 0 and beta > 0, got ({self.alpha}, {self.beta})")


@dataclass(frozen=True)
class Segment:
    spec: KernelSpec
    length: Optional[int] = None


@dataclass(frozen=True)
class Scenario:
    """A sequence of ``n`` curves split into segments with their own kernels.

    Segment lengths are either all given (and must sum to ``n``) or all left
    out, in which case the layout places the change-points.
    """

    n: int
    distribution: Distribution
    segments: tuple[Segment, ...]
    layout: Layout = Layout.NONE
    seed: int = 0
    shape: float = DEFAULT_SKEW_SHAPE
    grid_size: int = DEFAULT_GRID_SIZE
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "distribution", Distribution(self.distribution))
        object.__setattr__(self, "layout", Layout(self.layout))
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.n < 1:
            raise ValueError("n must be positive")
        if len(self.segments) < 1:
            raise ValueError("a scenario needs at least one segment")
        if len(self.segments) != self.layout.n_segments:
            raise ValueError(
                f"layout {self.layout.value!r} needs {self.layout.n_segments} segments, got {len(self.segments)}"
            )
        lengths = [s.length for s in self.segments]
        given = [x is not None for x in lengths]
        if any(given) and not all(given):
            raise ValueError("give either all segment lengths or none")
        if all(given):
            if any(x < 1 for x in lengths):
                raise ValueError("segment lengths must be positive")
            if sum(lengths) != self.n:
                raise ValueError(f"segment lengths sum to {sum(lengths)}, expected n={self.n}")
        if self.layout is Layout.EPIDEMIC and self.segments[0].spec != self.segments[2].spec:
            raise ValueError("epidemic layout needs matching outer segments")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")

    @property
    def grid(self) -> Grid:
        return Grid((self.grid_size,))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "distribution": self.distribution.value,
            "layout": self.layout.value,
            "seed": self.seed,
            "shape": self.shape,
            "grid_size": self.grid_size,
            "segments": [
                {"alpha": s.spec.alpha, "beta": s.spec.beta, **({"length": s.length} if s.length is not None else {})}
                for s in self.segments
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            segs = tuple(
                Segment(KernelSpec(float(s["alpha"]), float(s["beta"])), None if s.get("length") is None else int(s["length"]))
                for s in d["segments"]
            )
            return cls(
                n=int(d["n"]),
                distribution=Distribution(d.get("distribution", "gauss")),
                segments=segs,
                layout=Layout(d.get("layout", "none")),
                seed=int(d.get("seed", 0)),
                shape=float(d.get("shape", DEFAULT_SKEW_SHAPE)),
                grid_size=int(d.get("grid_size", DEFAULT_GRID_SIZE)),
                name=str(d.get("name", "")),
            )
        except KeyError as exc:
            raise ValueError(f"scenario is missing field {exc}") from None
        except TypeError as exc:
            raise ValueError(f"malformed scenario: {exc}") from None


def load_scenario(path) -> Scenario:
    return Scenario.from_dict(json.loads(Path(path).read_text()))


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(sc.to_dict(), indent=2, sort_keys=True) + "\n")


def _require_1d(grid: Grid) -> None:
    if grid.dims != 1:
        raise ValueError("simulation kernels are defined on d=1 grids")


def kernel_matrix(spec: KernelSpec, grid: Grid) -> np.ndarray:
    """Squared-exponential covariance on the grid points (no jitter)."""
    _require_1d(grid)
    s = grid.axis(0)
    diff = s[:, None] - s[None, :]
    return spec.beta * np.exp(-(diff * diff) / (2.0 * spec.alpha**2))


@lru_cache(maxsize=64)
def _cholesky(spec: KernelSpec, grid: Grid) -> np.ndarray:
    K = kernel_matrix(spec, grid)
    jitter = JITTER * spec.beta
    for _ in range(JITTER_RETRIES + 1):
        try:
            return np.linalg.cholesky(K + jitter * np.eye(K.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError(
        f"kernel matrix (alpha={spec.alpha}, beta={spec.beta}) not factorizable after jitter escalation"
    )


def _gauss_rows(spec: KernelSpec, grid: Grid, count: int, rng: np.random.Generator) -> np.ndarray:
    L = _cholesky(spec, grid)
    return rng.standard_normal((count, grid.n_points)) @ L.T


def gp_sample(spec: KernelSpec, grid: Grid, count: int, seed) -> FunctionalSample:
    """Zero-mean Gaussian process curves with the squared-exponential kernel."""
    rng = np.random.default_rng(seed)
    return FunctionalSample(grid, _gauss_rows(spec, grid, count, rng))


def t3_sample(spec: KernelSpec, grid: Grid, count: int, seed, df: float = 3.0) -> FunctionalSample:
    """Student-t process curves ``Z / sqrt(W / df)`` with ``W ~ chi2(df)`` per curve.

    The covariance is ``df / (df - 2)`` times the kernel, i.e. ``3 K`` for 3
    degrees of freedom.
    """
    if df <= 0:
        raise ValueError("df must be positive")
    rng = np.random.default_rng(seed)
    z = _gauss_rows(spec, grid, count, rng)
    w = rng.chisquare(df, size=count)
    return FunctionalSample(grid, z / np.sqrt(w / df)[:, None])


def skew_gauss_sample(spec: KernelSpec, grid: Grid, count: int, shape: float = DEFAULT_SKEW_SHAPE, seed=0) -> FunctionalSample:
    """Skew-normal process curves, centred to mean zero.

    ``X = delta |Z0| + sqrt(1 - delta^2) Z1 - delta sqrt(2 / pi) sqrt(K(t, t))``
    with independent Gaussian processes ``Z0, Z1`` and
    ``delta = shape / sqrt(1 + shape^2)``.
    """
    rng = np.random.default_rng(seed)
    delta = shape / math.sqrt(1.0 + shape * shape)
    z0 = _gauss_rows(spec, grid, count, rng)
    z1 = _gauss_rows(spec, grid, count, rng)
    centre = delta * math.sqrt(2.0 / math.pi) * math.sqrt(spec.beta)
    return FunctionalSample(grid, delta * np.abs(z0) + math.sqrt(1.0 - delta * delta) * z1 - centre)


def draw_separated_points(n: int, k: int, min_gap: int, rng: np.random.Generator) -> tuple[int, ...]:
    """``k`` change-points, uniform over layouts whose segments all have length >= ``min_gap``."""
    slack = n - (k + 1) * min_gap
    if slack < 0:
        raise ValueError(f"cannot place {k} change-points {min_gap} apart in n={n}")
    picks = np.sort(rng.choice(slack + k, size=k, replace=False))
    return tuple(int(picks[i] - i + (i + 1) * min_gap) for i in range(k))


def _segment_draw(sc: Scenario, spec: KernelSpec, count: int, seed) -> np.ndarray:
    grid = sc.grid
    if sc.distribution is Distribution.GAUSS:
        return gp_sample(spec, grid, count, seed).values
    if sc.distribution is Distribution.T3:
        return t3_sample(spec, grid, count, seed).values
    return skew_gauss_sample(spec, grid, count, sc.shape, seed).values


def change_points_for(sc: Scenario, rng: Optional[np.random.Generator] = None) -> ChangePointSet:
    """Ground-truth change-points implied by the scenario's lengths or layout."""
    n = sc.n
    if sc.segments[0].length is not None:
        cuts = np.cumsum([s.length for s in sc.segments])[:-1]
        return ChangePointSet(n, tuple(int(c) for c in cuts))
    if sc.layout is Layout.NONE:
        return ChangePointSet(n, ())
    if sc.layout is Layout.AMOC:
        if n < 2:
            raise ValueError("AMOC layout needs n >= 2")
        return ChangePointSet(n, (n // 2,))
    gap = max(1, math.ceil(MIN_GAP_FRACTION * n))
    rng = rng if rng is not None else np.random.default_rng(sc.seed)
    return ChangePointSet(n, draw_separated_points(n, sc.layout.n_segments - 1, gap, rng))


def build_scenario(sc: Scenario, seed=None) -> tuple[FunctionalSample, ChangePointSet]:
    """Draw one dataset; ``seed`` overrides the scenario's own seed."""
    seed = sc.seed if seed is None else seed
    children = np.random.SeedSequence(seed).spawn(1 + len(sc.segments))
    truth = change_points_for(sc, np.random.default_rng(children[0]))
    bounds = truth.boundaries()
    parts = []
    for i, seg in enumerate(sc.segments):
        count = int(bounds[i + 1] - bounds[i])
        parts.append(_segment_draw(sc, seg.spec, count, children[i + 1]))
    return FunctionalSample(sc.grid, np.vstack(parts)), truth


def _ramp(lo: float, hi: float, count: int) -> list[float]:
    return [float(v) for v in np.linspace(lo, hi, count)]


def make_scenario(
    layout,
    n: int,
    distribution="gauss",
    change: str = "magnitude",
    *,
    base_alpha: float = BASE_ALPHA,
    base_beta: float = BASE_BETA,
    changed_alpha: float = 0.1,
    changed_beta: float = 3.0,
    seed: int = 0,
    shape: float = DEFAULT_SKEW_SHAPE,
    grid_size: int = DEFAULT_GRID_SIZE,
    name: str = "",
) -> Scenario:
    """Standard designs: ``change`` is ``"magnitude"`` (beta), ``"shape"`` (alpha) or ``"none"``.

    Two-level layouts switch between the base and changed kernel.  The
    ascending five-change layout moves linearly from the smaller to the larger
    parameter value over its six segments.
    """
    layout = Layout(layout)
    if change not in ("magnitude", "shape", "none"):
        raise ValueError(f"unknown change type {change!r}")
    base = KernelSpec(base_alpha, base_beta)
    if change == "magnitude":
        other = KernelSpec(base_alpha, changed_beta)
    elif change == "shape":
        other = KernelSpec(changed_alpha, base_beta)
    else:
        other = base

    k = layout.n_segments
    if layout is Layout.FIVE_ASCENDING and change != "none":
        if change == "magnitude":
            vals = _ramp(min(base_beta, changed_beta), max(base_beta, changed_beta), k)
            specs = [KernelSpec(base_alpha, v) for v in vals]
        else:
            vals = _ramp(min(base_alpha, changed_alpha), max(base_alpha, changed_alpha), k)
            specs = [KernelSpec(v, base_beta) for v in vals]
    else:
        specs = [base if i % 2 == 0 else other for i in range(k)]
    return Scenario(
        n=n,
        distribution=Distribution(distribution),
        segments=tuple(Segment(s) for s in specs),
        layout=layout,
        seed=seed,
        shape=shape,
        grid_size=grid_size,
        name=name,
    )


def scenario_from_config(d: dict) -> Scenario:
    """Either a full scenario (with ``segments``) or the shorthand accepted by :func:`make_scenario`."""
    if "segments" in d:
        return Scenario.from_dict(d)
    try:
        keys = ("base_alpha", "base_beta", "changed_alpha", "changed_beta", "seed", "shape", "grid_size")
        extra = {k: d[k] for k in keys if k in d}
        return make_scenario(
            d.get("layout", "none"),
            int(d["n"]),
            d.get("distribution", "gauss"),
            d.get("change", "magnitude"),
            name=str(d.get("name", "")),
            **extra,
        )
    except KeyError as exc:
        raise ValueError(f"scenario is missing field {exc}") from None


def effect_label(sc: Scenario) -> str:
    specs = [s.spec for s in sc.segments]
    alphas = [s.alpha for s in specs]
    betas = [s.beta for s in specs]
    if len(set(specs)) == 1:
        return "none"
    parts = []
    if len(set(betas)) > 1:
        parts.append("beta " + "->".join(f"{b:g}" for b in betas))
    if len(set(alphas)) > 1:
        parts.append("alpha " + "->".join(f"{a:g}" for a in alphas))
    return "; ".join(parts)
