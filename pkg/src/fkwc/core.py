"""Functional samples on uniform grids, quadrature, gradients and file I/O."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

TENSOR_MAGIC = b"FKWCTEN1"


class FormatError(ValueError):
    """Raised when an input file does not match the expected layout."""


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid on [0, 1]^d, endpoints included."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) == 0:
            raise ValueError("grid needs at least one axis")
        if any(s < 2 for s in sizes):
            raise ValueError(f"every axis needs at least 2 points, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def dims(self) -> int:
        return len(self.sizes)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(1.0 / (s - 1) for s in self.sizes)

    def axis(self, j: int) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.sizes[j])

    def coordinates(self) -> list[np.ndarray]:
        """Flattened (row-major) coordinate arrays, one per axis."""
        mesh = np.meshgrid(*[self.axis(j) for j in range(self.dims)], indexing="ij")
        return [m.ravel() for m in mesh]

    def weights(self) -> np.ndarray:
        """Tensor-product trapezoidal weights, flattened row-major; they sum to 1."""
        w = np.ones(1)
        for s in self.sizes:
            wj = np.full(s, 1.0 / (s - 1))
            wj[0] *= 0.5
            wj[-1] *= 0.5
            w = np.multiply.outer(w, wj).ravel()
        return w


@dataclass(frozen=True)
class FunctionalSample:
    """``n`` functions observed on a shared grid.

    ``values`` is ``n x N`` with rows flattened in row-major axis order.
    ``gradients`` is either ``None`` or a tuple of ``d`` arrays of the same
    shape holding the partial derivatives along each axis.
    """

    grid: Grid
    values: np.ndarray
    gradients: Optional[tuple[np.ndarray, ...]] = field(default=None)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("values must be a 2-D array (n x N)")
        if values.shape[1] != self.grid.n_points:
            raise ValueError(
                f"values have {values.shape[1]} columns but grid has {self.grid.n_points} points"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("sample contains non-finite values")
        object.__setattr__(self, "values", values)
        if self.gradients is not None:
            grads = tuple(np.ascontiguousarray(g, dtype=np.float64) for g in self.gradients)
            if len(grads) != self.grid.dims:
                raise ValueError("need one gradient array per grid axis")
            for g in grads:
                if g.shape != values.shape:
                    raise ValueError("gradient arrays must match values in shape")
            object.__setattr__(self, "gradients", grads)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def has_gradients(self) -> bool:
        return self.gradients is not None

    def centered(self) -> "FunctionalSample":
        """Subtract the pointwise sample mean (gradients are recomputed lazily)."""
        return FunctionalSample(self.grid, self.values - self.values.mean(axis=0))

    def subset(self, rows) -> "FunctionalSample":
        grads = None
        if self.gradients is not None:
            grads = tuple(g[rows] for g in self.gradients)
        return FunctionalSample(self.grid, self.values[rows], grads)


@dataclass(frozen=True)
class ChangePointSet:
    """Interior change-points ``0 < k_1 < ... < k_l < n``.

    A point ``k`` closes the segment ending at observation ``k`` (1-based), so
    segment ``i`` holds observations ``k_{i-1}+1 .. k_i``.
    """

    n: int
    points: tuple[int, ...] = ()

    def __post_init__(self):
        pts = tuple(int(k) for k in self.points)
        if self.n < 1:
            raise ValueError("sequence length must be positive")
        prev = 0
        for k in pts:
            if k <= prev or k >= self.n:
                raise ValueError(f"change-points must satisfy 0 < k_1 < ... < n={self.n}, got {pts}")
            prev = k
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def boundaries(self) -> np.ndarray:
        """``[0, k_1, ..., k_l, n]``."""
        return np.array((0,) + self.points + (self.n,), dtype=np.int64)

    def segment_lengths(self) -> np.ndarray:
        return np.diff(self.boundaries())


def _check_grid_function(x: np.ndarray, grid: Grid) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != grid.n_points:
        raise ValueError(f"grid mismatch: function has {x.shape[-1]} values, grid has {grid.n_points}")
    return x


def inner_product(x, y, grid: Grid):
    """Trapezoidal approximation of the integral of ``x * y`` over [0,1]^d.

    Either argument may carry leading batch dimensions; the last axis runs
    over grid points.
    """
    x = _check_grid_function(x, grid)
    y = _check_grid_function(y, grid)
    return np.sum(x * y * grid.weights(), axis=-1)


def l2_norm_sq(x, grid: Grid):
    return inner_product(x, x, grid)


def finite_diff_gradient(sample: FunctionalSample) -> FunctionalSample:
    """Attach per-axis partial derivatives estimated by finite differences.

    Central differences at interior points, first-order one-sided
    differences at the boundary of each axis.
    """
    grid = sample.grid
    shaped = sample.values.reshape((sample.n,) + grid.sizes)
    grads = []
    for j, h in enumerate(grid.spacing):
        g = np.gradient(shaped, h, axis=j + 1, edge_order=1)
        grads.append(g.reshape(sample.n, grid.n_points))
    return FunctionalSample(grid, sample.values, tuple(grads))


def load_csv(path, has_header: bool = False) -> FunctionalSample:
    """Read a rectangular CSV: one observation per row, one grid point per column."""
    rows: list[list[float]] = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"ragged row at line {lineno}: expected {width} cells, got {len(row)}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise FormatError(f"non-numeric cell at line {lineno}") from None
    if not rows:
        raise FormatError("CSV contains no observations")
    if width < 2:
        raise FormatError("need at least 2 grid points (columns)")
    return FunctionalSample(Grid((width,)), np.array(rows, dtype=np.float64))


def save_csv(sample: FunctionalSample, path) -> None:
    if sample.grid.dims != 1:
        raise ValueError("CSV export only supports d=1 samples; use save_tensor")
    np.savetxt(path, sample.values, delimiter=",", fmt="%.17g")


def load_tensor(path) -> FunctionalSample:
    """Read the FKWCTEN1 binary layout (little-endian, row-major float64 payload)."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != TENSOR_MAGIC:
        raise FormatError("unrecognized format: missing FKWCTEN1 magic")
    n, d = struct.unpack_from("<II", data, 8)
    offset = 16
    if d == 0:
        raise FormatError("tensor file declares d=0")
    if len(data) < offset + 4 * d:
        raise FormatError("truncated header")
    sizes = struct.unpack_from(f"<{d}I", data, offset)
    offset += 4 * d
    if any(s < 2 for s in sizes):
        raise FormatError(f"every axis needs at least 2 points, got {sizes}")
    total = n * int(np.prod(sizes))
    expected = offset + 8 * total
    if len(data) < expected:
        raise FormatError(f"truncated payload: expected {total} float64 values")
    if len(data) > expected:
        raise FormatError("trailing bytes after payload")
    values = np.frombuffer(data, dtype="<f8", count=total, offset=offset)
    grid = Grid(tuple(sizes))
    return FunctionalSample(grid, values.reshape(n, grid.n_points).astype(np.float64))


def save_tensor(sample: FunctionalSample, path) -> None:
    sizes = sample.grid.sizes
    header = TENSOR_MAGIC + struct.pack(f"<II{len(sizes)}I", sample.n, len(sizes), *sizes)
    payload = np.ascontiguousarray(sample.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def load_sample(path, has_header: bool = False) -> FunctionalSample:
    """Dispatch on content: FKWCTEN1 magic means binary tensor, anything else CSV."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == TENSOR_MAGIC:
        return load_tensor(path)
    return load_csv(path, has_header=has_header)


def sample_from_rows(rows: Sequence[Sequence[float]], sizes: Optional[Sequence[int]] = None) -> FunctionalSample:
    values = np.asarray(rows, dtype=np.float64)
    grid = Grid(tuple(sizes) if sizes is not None else (values.shape[1],))
    return FunctionalSample(grid, values)
