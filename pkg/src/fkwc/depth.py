"""Functional depth scores: random projection, integrated halfspace and norm-based.

Every method returns one score per observation with the convention that a
larger score means a deeper (more central) function.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import _kernels
from .core import FunctionalSample, Grid, finite_diff_gradient, l2_norm_sq

DEFAULT_PROJECTIONS = 50
DEFAULT_BASIS_SIZE = 21
DEFAULT_TUKEY_DIRECTIONS = 500


class DepthMethod(str, enum.Enum):
    RP = "rp"
    RP_DERIV = "rp-deriv"
    MFHD = "mfhd"
    MFHD_DERIV = "mfhd-deriv"
    NORM = "norm"
    NORM_DERIV = "norm-deriv"

    @property
    def uses_derivatives(self) -> bool:
        return self.value.endswith("-deriv")


@dataclass(frozen=True)
class DirectionSet:
    grid: Grid
    directions: np.ndarray  # M x N, unit trapezoidal L2 norm
    seed: int
    basis_size: int

    @property
    def M(self) -> int:
        return self.directions.shape[0]


@dataclass(frozen=True)
class DepthScores:
    method: DepthMethod
    values: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _axis_fourier(t: np.ndarray, index: int) -> np.ndarray:
    # index 0 -> 1, 2k-1 -> sqrt(2) sin(2 pi k t), 2k -> sqrt(2) cos(2 pi k t)
    if index == 0:
        return np.ones_like(t)
    k = (index + 1) // 2
    if index % 2 == 1:
        return np.sqrt(2.0) * np.sin(2.0 * np.pi * k * t)
    return np.sqrt(2.0) * np.cos(2.0 * np.pi * k * t)


def _basis_indices(dims: int, count: int) -> list[tuple[int, ...]]:
    """First ``count`` tensor-product multi-indices, graded by total index then lexicographic."""
    out: list[tuple[int, ...]] = []
    total = 0
    while len(out) < count:
        level = []

        def rec(prefix, remaining, left):
            if left == 1:
                level.append(prefix + (remaining,))
                return
            for i in range(remaining + 1):
                rec(prefix + (i,), remaining - i, left - 1)

        rec((), total, dims)
        out.extend(sorted(level))
        total += 1
    return out[:count]


def fourier_basis(grid: Grid, count: int) -> np.ndarray:
    """``count x N`` matrix of tensor-product Fourier functions on the grid."""
    indices = _basis_indices(grid.dims, count)
    for idx in indices:
        for j, i in enumerate(idx):
            freq = (i + 1) // 2
            if freq >= grid.sizes[j] / 2:
                raise ValueError(
                    f"basis size {count} needs frequency {freq} on axis {j}, "
                    f"which a grid of {grid.sizes[j]} points cannot represent"
                )
    coords = grid.coordinates()
    basis = np.empty((count, grid.n_points))
    for row, idx in enumerate(indices):
        f = np.ones(grid.n_points)
        for j, i in enumerate(idx):
            f = f * _axis_fourier(coords[j], i)
        basis[row] = f
    return basis


def draw_directions(grid: Grid, M: int = DEFAULT_PROJECTIONS, B: int = DEFAULT_BASIS_SIZE, seed: int = 0) -> DirectionSet:
    """Random unit-norm directions built from Gaussian Fourier coefficients.

    The first coefficient is taken in absolute value so that ``B=1`` yields
    the constant function 1 rather than a random sign.
    """
    if M < 1 or B < 1:
        raise ValueError("need M >= 1 and B >= 1")
    basis = fourier_basis(grid, B)
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal((M, B))
    coef[:, 0] = np.abs(coef[:, 0])
    dirs = coef @ basis
    norms = np.sqrt(l2_norm_sq(dirs, grid))
    if np.any(norms == 0.0):
        raise ValueError("degenerate direction drawn; use a different seed")
    return DirectionSet(grid, dirs / norms[:, None], int(seed), int(B))


def _consistent_matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``A @ B`` where identical rows of ``A`` give bit-identical output rows.

    BLAS kernels may round equal rows differently, which would break ties
    that the depth definitions rely on.
    """
    uniq, inverse = np.unique(A, axis=0, return_inverse=True)
    if uniq.shape[0] == A.shape[0]:
        return A @ B
    return (uniq @ B)[inverse.reshape(-1)]


def _small_dot(P: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``P @ V.T`` for few columns, evaluated row by row without BLAS."""
    return (P[:, None, :] * V[None, :, :]).sum(axis=2)


def project(values: np.ndarray, dirs: DirectionSet) -> np.ndarray:
    """``n x M`` matrix of inner products with each direction."""
    return _consistent_matmul(values, (dirs.directions * dirs.grid.weights()).T)


def ecdf_depth(proj: np.ndarray) -> np.ndarray:
    """Column-wise ``F(p)(1 - F(p))`` with ``F(p) = #{p_j <= p} / n``."""
    n = proj.shape[0]
    F = rankdata(proj, method="max", axis=0) / n
    return F * (1.0 - F)


def halfspace_depth_1d(points, x: float) -> float:
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    return min(int(np.sum(points <= x)), int(np.sum(points >= x))) / n


def halfspace_depth_1d_all(values: np.ndarray) -> np.ndarray:
    """Depth of each entry within its column, by counting."""
    n = values.shape[0]
    below = rankdata(values, method="max", axis=0)
    above = n - rankdata(values, method="min", axis=0) + 1
    return np.minimum(below, above) / n


def halfspace_depth_2d(points, x) -> float:
    """Exact bivariate halfspace depth of ``x`` by an O(n log n) angular sweep."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x = np.asarray(x, dtype=np.float64)
    return float(_kernels.hd2_single(
        np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]), float(x[0]), float(x[1])
    ))


_HD2_BLOCK = 1 << 20  # angle-matrix entries processed at once


def hd2_columns(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Exact bivariate halfspace depth of every point within its own column.

    ``xs`` and ``ys`` are ``n x K``; column ``k`` is an independent 2-D sample.
    Angles are sorted row-wise with numpy and swept in compiled code.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n, K = xs.shape
    out = np.empty((n, K))
    rows = max(1, _HD2_BLOCK // n)
    for k in range(K):
        x = xs[:, k]
        y = ys[:, k]
        for start in range(0, n, rows):
            stop = min(n, start + rows)
            dx = x[None, :] - x[start:stop, None]
            dy = y[None, :] - y[start:stop, None]
            ang = np.arctan2(dy, dx)
            same = (dx == 0.0) & (dy == 0.0)
            ang[same] = np.inf  # coincident points sort last and are skipped
            ang.sort(axis=1)
            valid = (n - same.sum(axis=1)).astype(np.int64)
            out[start:stop, k] = _kernels.hd2_sorted_rows(ang, valid)
    return out


def random_unit_directions(k: int, K: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((K, k))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def halfspace_depth_random(points, x, K: int = DEFAULT_TUKEY_DIRECTIONS, seed: int = 0) -> float:
    """Randomised Tukey depth: min over ``K`` random directions of the upper count.

    Counts compare projections, ``<p_j, v> >= <x, v>``.  The result can only
    over-estimate the exact depth.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    V = random_unit_directions(pts.shape[1], K, seed)
    # differencing first keeps copies of x at exactly zero
    counts = np.sum((pts - x) @ V.T >= 0.0, axis=0)
    return float(counts.min() / pts.shape[0])


def halfspace_depth_random_all(points: np.ndarray, K: int = DEFAULT_TUKEY_DIRECTIONS, seed: int = 0) -> np.ndarray:
    """Randomised Tukey depth of every sample point w.r.t. the sample."""
    pts = np.asarray(points, dtype=np.float64)
    V = random_unit_directions(pts.shape[1], K, seed)
    return _kernels.min_upper_counts(_small_dot(pts, V))


def _require_gradients(sample: FunctionalSample, use_derivatives: bool) -> FunctionalSample:
    if sample.n < 1:
        raise ValueError("empty sample")
    if use_derivatives and not sample.has_gradients:
        raise ValueError("derivative depth requested but the sample has no gradients")
    return sample


def rp_depth(
    sample: FunctionalSample,
    dirs: DirectionSet,
    use_derivatives: bool = False,
    tukey_directions: int = DEFAULT_TUKEY_DIRECTIONS,
) -> DepthScores:
    """Random projection depth averaged over the direction set.

    Without derivatives each projection uses the univariate ``F(1 - F)``
    depth.  With derivatives the projections of the function and its partial
    derivatives form (1+d)-vectors scored by halfspace depth: exactly for
    d = 1, by randomised Tukey depth otherwise.
    """
    _require_gradients(sample, use_derivatives)
    if dirs.grid != sample.grid:
        raise ValueError("direction set was drawn on a different grid")
    proj = project(sample.values, dirs)
    params = {"M": dirs.M, "basis_size": dirs.basis_size, "seed": dirs.seed}
    if not use_derivatives:
        return DepthScores(DepthMethod.RP, ecdf_depth(proj).mean(axis=1), params)

    dproj = [project(g, dirs) for g in sample.gradients]
    if sample.grid.dims == 1:
        per = hd2_columns(np.ascontiguousarray(proj), np.ascontiguousarray(dproj[0]))
    else:
        per = np.empty_like(proj)
        for m in range(dirs.M):
            pts = np.column_stack([proj[:, m]] + [dp[:, m] for dp in dproj])
            per[:, m] = halfspace_depth_random_all(pts, tukey_directions, seed=dirs.seed * 1_000_003 + m)
        params["tukey_directions"] = tukey_directions
    return DepthScores(DepthMethod.RP_DERIV, per.mean(axis=1), params)


def mfhd_pointwise(
    sample: FunctionalSample,
    use_derivatives: bool = False,
    tukey_directions: int = DEFAULT_TUKEY_DIRECTIONS,
    seed: int = 0,
) -> np.ndarray:
    """``n x N`` matrix of pointwise halfspace depths."""
    _require_gradients(sample, use_derivatives)
    if not use_derivatives:
        return halfspace_depth_1d_all(sample.values)
    if sample.grid.dims == 1:
        return hd2_columns(sample.values, sample.gradients[0])
    n, N = sample.values.shape
    V = random_unit_directions(1 + sample.grid.dims, tukey_directions, seed)
    out = np.empty((n, N))
    stacked = np.stack((sample.values,) + sample.gradients, axis=2)  # n x N x (1+d)
    for t in range(N):
        out[:, t] = _kernels.min_upper_counts(_small_dot(stacked[:, t, :], V))
    return out


def mfhd_depth(
    sample: FunctionalSample,
    use_derivatives: bool = False,
    tukey_directions: int = DEFAULT_TUKEY_DIRECTIONS,
    seed: int = 0,
) -> DepthScores:
    """Integrated (multivariate functional) halfspace depth, trapezoidal in t."""
    pointwise = mfhd_pointwise(sample, use_derivatives, tukey_directions, seed)
    scores = (pointwise * sample.grid.weights()).sum(axis=1)
    method = DepthMethod.MFHD_DERIV if use_derivatives else DepthMethod.MFHD
    params = {}
    if use_derivatives and sample.grid.dims > 1:
        params = {"tukey_directions": tukey_directions, "seed": seed}
    return DepthScores(method, scores, params)


def norm_scores(sample: FunctionalSample, use_derivatives: bool = False) -> DepthScores:
    """Negated squared L2 norm (plus squared norms of the partial derivatives)."""
    _require_gradients(sample, use_derivatives)
    total = l2_norm_sq(sample.values, sample.grid)
    if use_derivatives:
        for g in sample.gradients:
            total = total + l2_norm_sq(g, sample.grid)
    return DepthScores(DepthMethod.NORM_DERIV if use_derivatives else DepthMethod.NORM, -total)


def compute_depth(
    sample: FunctionalSample,
    method,
    *,
    M: int = DEFAULT_PROJECTIONS,
    basis_size: int = DEFAULT_BASIS_SIZE,
    tukey_directions: int = DEFAULT_TUKEY_DIRECTIONS,
    seed: int = 0,
) -> DepthScores:
    """Score a sample with any depth method, estimating gradients when needed."""
    method = DepthMethod(method)
    if method.uses_derivatives and not sample.has_gradients:
        sample = finite_diff_gradient(sample)
    deriv = method.uses_derivatives
    if method in (DepthMethod.RP, DepthMethod.RP_DERIV):
        dirs = draw_directions(sample.grid, M, basis_size, seed)
        return rp_depth(sample, dirs, deriv, tukey_directions)
    if method in (DepthMethod.MFHD, DepthMethod.MFHD_DERIV):
        return mfhd_depth(sample, deriv, tukey_directions, seed)
    return norm_scores(sample, deriv)
