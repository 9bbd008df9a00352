"""Cell-centred uniform grids on intervals, rectangles and disks, and grid fields."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    """Bounded domain D.

    ``kind`` is ``"interval"`` (bounds ``(a, b)``), ``"rectangle"`` (bounds
    ``(x0, x1, y0, y1)``) or ``"disk"`` (bounds of the enclosing square plus
    ``center`` and ``radius``).
    """

    kind: str
    bounds: tuple
    center: tuple | None = None
    radius: float | None = None

    def __post_init__(self):
        if self.kind not in ("interval", "rectangle", "disk"):
            raise GridError(f"unknown domain kind {self.kind!r}")
        lo, hi = self.bounds[0::2], self.bounds[1::2]
        if len(self.bounds) != 2 * self.n or any(b <= a for a, b in zip(lo, hi)):
            raise GridError(f"empty or malformed bounds {self.bounds}")
        if self.kind == "disk" and not (self.radius and self.radius > 0):
            raise GridError("disk needs a positive radius")

    @classmethod
    def interval(cls, a: float = -1.0, b: float = 1.0) -> Domain:
        return cls("interval", (float(a), float(b)))

    @classmethod
    def rectangle(cls, x0: float, x1: float, y0: float, y1: float) -> Domain:
        return cls("rectangle", (float(x0), float(x1), float(y0), float(y1)))

    @classmethod
    def disk(cls, cx: float = 0.0, cy: float = 0.0, radius: float = 1.0) -> Domain:
        r = float(radius)
        return cls("disk", (cx - r, cx + r, cy - r, cy + r), (float(cx), float(cy)), r)

    @property
    def n(self) -> int:
        return 1 if self.kind == "interval" else 2

    @property
    def measure(self) -> float:
        """Lebesgue measure |D| of the continuous domain."""
        if self.kind == "disk":
            return math.pi * self.radius ** 2
        b = self.bounds
        if self.kind == "interval":
            return b[1] - b[0]
        return (b[1] - b[0]) * (b[3] - b[2])

    @property
    def diameter(self) -> float:
        b = np.asarray(self.bounds, dtype=float)
        return float(np.linalg.norm(b[1::2] - b[0::2]))


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred lattice restricted to the cells inside D.

    Attributes
    ----------
    shape : tuple of int
        Lattice size per axis over the bounding box.
    lattice : ndarray, shape (m, n)
        Integer lattice coordinates of the interior cells (row-major order).
    nodes : ndarray, shape (m, n)
        Cell centres of the interior cells.
    """

    domain: Domain
    N: int
    h: float
    shape: tuple
    lattice: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def interior_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def cellvol(self) -> float:
        return self.h ** self.n

    @property
    def measure(self) -> float:
        """Measure of the discrete domain (union of interior cells)."""
        return self.interior_count * self.cellvol

    @property
    def x(self) -> np.ndarray:
        """1D node coordinates (first axis for 2D grids)."""
        return self.nodes[:, 0]

    @property
    def is_box(self) -> bool:
        """True when the interior cells fill the whole bounding box."""
        return self.interior_count == int(np.prod(self.shape))

    def index_map(self) -> np.ndarray:
        """Lattice-shaped array holding the interior index of each cell, -1 outside D."""
        idx = -np.ones(self.shape, dtype=np.int64)
        idx[tuple(self.lattice.T)] = np.arange(self.interior_count)
        return idx

    def neighbors(self) -> np.ndarray:
        """Axis neighbours, shape (m, 2n): index of the neighbour cell or -1 if it lies outside D."""
        idx = self.index_map()
        padded = np.pad(idx, 1, constant_values=-1)
        out = np.empty((self.interior_count, 2 * self.n), dtype=np.int64)
        base = self.lattice + 1
        col = 0
        for axis in range(self.n):
            for step in (-1, 1):
                shifted = base.copy()
                shifted[:, axis] += step
                out[:, col] = padded[tuple(shifted.T)]
                col += 1
        return out


def build_grid(domain: Domain, N: int) -> Grid:
    """Cell-centred grid with ``N`` cells along the first axis of ``domain``.

    The cell size is ``h = (b - a) / N``. Rectangles need a second side that
    is an integer multiple of ``h``. For a disk, the cells whose centre lies
    inside the disk form the interior.
    """
    if int(N) != N or N < 3:
        raise GridError(f"need at least 3 cells per axis, got N={N}")
    N = int(N)
    b = domain.bounds
    h = (b[1] - b[0]) / N
    if domain.n == 1:
        shape = (N,)
        lattice = np.arange(N).reshape(-1, 1)
        nodes = b[0] + (lattice + 0.5) * h
        return Grid(domain, N, h, shape, lattice, nodes.astype(float))

    ny_float = (b[3] - b[2]) / h
    Ny = int(round(ny_float))
    if abs(ny_float - Ny) > 1e-9 * max(1.0, ny_float) or Ny < 1:
        raise GridError("second side of the rectangle must be an integer multiple of h")
    I, J = np.meshgrid(np.arange(N), np.arange(Ny), indexing="ij")
    lattice = np.stack([I.ravel(), J.ravel()], axis=1)
    nodes = np.column_stack([b[0] + (lattice[:, 0] + 0.5) * h, b[2] + (lattice[:, 1] + 0.5) * h])
    if domain.kind == "disk":
        c = np.asarray(domain.center)
        inside = np.sum((nodes - c) ** 2, axis=1) < domain.radius ** 2
        lattice, nodes = lattice[inside], nodes[inside]
    if nodes.shape[0] == 0:
        raise GridError("grid has no interior cells")
    return Grid(domain, N, h, (N, Ny), lattice, nodes)


@dataclass
class Field:
    """Values on the interior nodes plus a constant value on the complement of D."""

    values: np.ndarray
    exterior: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise GridError("field values must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise GridError("field values must be finite")

    def __len__(self):
        return self.values.shape[0]

    def shifted(self) -> np.ndarray:
        """Values minus the exterior constant (a field with zero exterior)."""
        return self.values - self.exterior


def as_values(f, grid: Grid | None = None, require_zero_exterior: bool = True) -> np.ndarray:
    """Return the value array of a Field or array, checking the exterior convention."""
    if isinstance(f, Field):
        if require_zero_exterior and f.exterior != 0.0:
            raise GridError(f"expected a field with zero exterior value, got {f.exterior}; shift it first")
        v = f.values
    else:
        v = np.asarray(f, dtype=float)
    if grid is not None and v.shape != (grid.interior_count,):
        raise GridError(f"field has {v.shape} values, grid has {grid.interior_count} interior nodes")
    return v


def integrate(grid: Grid, f) -> float:
    """Midpoint rule ``h^n * sum(values)`` over D."""
    v = as_values(f, grid, require_zero_exterior=False)
    return float(grid.cellvol * np.sum(v))


def split_signs(f: Field) -> tuple[Field, Field]:
    """Positive and negative parts, ``f = plus - minus``, exterior value included."""
    if not isinstance(f, Field):
        f = Field(f)
    plus = Field(np.maximum(f.values, 0.0), max(f.exterior, 0.0))
    minus = Field(np.maximum(-f.values, 0.0), max(-f.exterior, 0.0))
    return plus, minus


def write_field_csv(path, grid: Grid, f, name: str = "value") -> None:
    """Write ``x[, y], value`` rows with a header, 17 significant digits."""
    v = as_values(f, grid, require_zero_exterior=False)
    coords = ["x", "y"][: grid.n]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(coords + [name])
        for p, val in zip(grid.nodes, v):
            w.writerow([f"{c:.17g}" for c in p] + [f"{val:.17g}"])


def read_field_csv(path, exterior: float = 0.0) -> tuple[np.ndarray, Field]:
    """Read a field CSV written by :func:`write_field_csv`; returns ``(nodes, field)``."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise GridError(f"{path}: no data rows")
    return data[:, :-1], Field(data[:, -1], exterior)
