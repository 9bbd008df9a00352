"""Dense midpoint discretization of the fractional Laplacian with zero exterior data.

For cell centres ``x_i`` the operator is ``A_ij = -w_ij`` (i != j) and
``A_ii = sum_j w_ij + t_i`` with

* ``w_ij = c h^n / |x_i - x_j|^(n+2s)`` for cells at distance >= 2h,
* the exact (1D) or 4x4 Gauss (2D) integral of the kernel over cell j for
  adjacent cells,
* ``t_i`` the kernel integrated over the complement of D.

The principal-value integral over the cell of ``x_i`` itself is either
dropped (``self_cell="omit"``) or replaced by its second-order Taylor term,
a multiple of the standard (2n+1)-point Laplacian with face Dirichlet data
(``self_cell="taylor"``). Both choices keep the M-matrix sign pattern; only
the second reduces to the local Laplacian as s -> 1 with the normalized
constant.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, linalg, special

from .grid import Field, Grid, GridError, as_values
from .kernel import KernelParams

DEFAULT_MAX_NODES = 4096
SELF_CELL_MODES = ("taylor", "omit")

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(4)
_MAGIC = b"FLAP"


class OperatorSizeError(MemoryError):
    """Dense storage would exceed the configured node cap."""


@dataclass
class NonlocalOperator:
    """Assembled discrete ``(-Delta)^s`` on the interior nodes of ``grid``.

    ``tail`` holds the row sums (all exterior coupling, including the face
    terms of the self-cell correction); ``exterior_integral`` holds only the
    kernel integral over the complement of D.
    """

    A: np.ndarray = field(repr=False)
    params: KernelParams | None
    grid: Grid = field(repr=False)
    tail: np.ndarray = field(repr=False)
    exterior_integral: np.ndarray = field(repr=False)
    self_cell: str = "taylor"
    _chol: tuple | None = field(default=None, init=False, repr=False)
    _lam_max: float | None = field(default=None, init=False, repr=False)

    @property
    def size(self) -> int:
        return self.A.shape[0]

    def cholesky(self):
        if self._chol is None:
            self._chol = linalg.cho_factor(self.A, lower=True)
        return self._chol

    def apply(self, w) -> np.ndarray:
        return apply(self, w)

    def energy(self, w) -> float:
        return energy(self, w)


def _adjacent_weight_2d(h: float, s: float, offset: tuple[int, int]) -> float:
    # 4x4 tensor Gauss rule for the kernel over the cell centred at offset*h, seen from the origin
    cx, cy = offset[0] * h, offset[1] * h
    gx = cx + 0.5 * h * _GAUSS_X
    gy = cy + 0.5 * h * _GAUSS_X
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    Wt = np.outer(_GAUSS_W, _GAUSS_W) * 0.25 * h * h
    return float(np.sum(Wt * (X * X + Y * Y) ** (-1.0 - s)))


def _second_moment(n: int, h: float, s: float) -> float:
    """Integral of z_1^2 |z|^(-n-2s) over the cell centred at the origin."""
    half = 0.5 * h
    if n == 1:
        return 2.0 * half ** (2.0 - 2.0 * s) / (2.0 - 2.0 * s)
    ang, _ = integrate.quad(lambda th: math.cos(th) ** (2.0 * s - 2.0), 0.0, 0.25 * math.pi)
    # 8 symmetric triangles of the square; z_1^2 averages to |z|^2 / 2
    return 0.5 * 8.0 * half ** (2.0 - 2.0 * s) / (2.0 - 2.0 * s) * ang


def _exterior_interval(x: np.ndarray, a: float, b: float, s: float) -> np.ndarray:
    return ((x - a) ** (-2.0 * s) + (b - x) ** (-2.0 * s)) / (2.0 * s)


def _cos_power_integral(phi: np.ndarray, s: float) -> np.ndarray:
    """Integral of cos^(2s) over [0, phi] for phi in [0, pi/2], via the incomplete beta function."""
    a, b = 0.5, s + 0.5
    return 0.5 * special.beta(a, b) * special.betainc(a, b, np.sin(phi) ** 2)


def _exterior_box(points: np.ndarray, box: tuple, s: float) -> np.ndarray:
    """Integral of |x - y|^(-2-2s) over the complement of an axis-aligned box, for x inside it.

    In polar coordinates around x this is (1/2s) times the integral of
    rho(theta)^(-2s) over the directions, rho being the distance to the box
    boundary; each side contributes d^(-2s) times an integral of cos^(2s).
    """
    x0, x1, y0, y1 = box
    px, py = points[:, 0], points[:, 1]
    total = np.zeros(points.shape[0])
    # (distance to the side, extent to either side along it)
    sides = [
        (x1 - px, py - y0, y1 - py),
        (px - x0, y1 - py, py - y0),
        (y1 - py, px - x0, x1 - px),
        (py - y0, x1 - px, px - x0),
    ]
    for d, lo, hi in sides:
        ang = _cos_power_integral(np.arctan2(lo, d), s) + _cos_power_integral(np.arctan2(hi, d), s)
        total += d ** (-2.0 * s) * ang
    return total / (2.0 * s)


def _pair_weights_2d(h: float, s: float, diff: np.ndarray, adjacent: dict) -> np.ndarray:
    """Coupling weights (without c) for lattice offsets ``diff`` (shape (..., 2)), nonzero offsets only."""
    k2 = np.sum(diff * diff, axis=-1).astype(float)
    with np.errstate(divide="ignore"):
        w = h ** 2 / (h * h * k2) ** (1.0 + s)
    near = (k2 > 0) & (k2 < 4)
    w[near & (k2 == 1)] = adjacent[1]
    w[near & (k2 == 2)] = adjacent[2]
    w[k2 == 0] = 0.0
    return w


def assemble(grid: Grid, params: KernelParams, self_cell: str = "taylor",
             max_nodes: int = DEFAULT_MAX_NODES) -> NonlocalOperator:
    """Assemble the dense symmetric operator matrix.

    Parameters
    ----------
    grid : Grid
    params : KernelParams
        Dimension must match the grid.
    self_cell : {"taylor", "omit"}
        Treatment of the principal-value integral over the node's own cell.
    max_nodes : int
        Refuse to allocate more than ``max_nodes**2`` matrix entries.

    Returns
    -------
    NonlocalOperator
    """
    if params.n != grid.n:
        raise GridError(f"kernel dimension {params.n} does not match grid dimension {grid.n}")
    if self_cell not in SELF_CELL_MODES:
        raise ValueError(f"self_cell must be one of {SELF_CELL_MODES}")
    m = grid.interior_count
    if m > max_nodes:
        raise OperatorSizeError(f"{m} interior nodes exceed the dense-storage cap of {max_nodes}")

    s, h, n = params.s, grid.h, grid.n
    c = params.constant
    if n == 1:
        k = np.abs(grid.lattice[:, 0][:, None] - grid.lattice[:, 0][None, :]).astype(float)
        with np.errstate(divide="ignore"):
            W = h / (h * k) ** (1.0 + 2.0 * s)
        W[k == 1] = ((0.5 * h) ** (-2.0 * s) - (1.5 * h) ** (-2.0 * s)) / (2.0 * s)
        np.fill_diagonal(W, 0.0)
        a, b = grid.domain.bounds
        ext = _exterior_interval(grid.x, a, b, s)
    else:
        adjacent = {1: _adjacent_weight_2d(h, s, (1, 0)), 2: _adjacent_weight_2d(h, s, (1, 1))}
        W = np.empty((m, m))
        lat = grid.lattice
        for start in range(0, m, 512):
            stop = min(start + 512, m)
            W[start:stop] = _pair_weights_2d(h, s, lat[start:stop, None, :] - lat[None, :, :], adjacent)
        b = grid.domain.bounds
        ext = _exterior_box(grid.nodes, b, s)
        if not grid.is_box:
            # cells of the bounding box that lie outside D belong to the exterior
            idx = grid.index_map()
            outside = np.argwhere(idx < 0)
            for start in range(0, m, 512):
                stop = min(start + 512, m)
                diff = lat[start:stop, None, :] - outside[None, :, :]
                ext[start:stop] += _pair_weights_2d(h, s, diff, adjacent).sum(axis=1)

    faces = np.zeros(m)
    if self_cell == "taylor":
        beta = _second_moment(n, h, s) / (2.0 * h * h)
        nb = grid.neighbors()
        rows = np.repeat(np.arange(m), nb.shape[1])
        cols = nb.ravel()
        inside = cols >= 0
        np.add.at(W, (rows[inside], cols[inside]), beta)
        # missing neighbour: ghost value -u_i (zero on the cell face), i.e. 2*beta on the diagonal
        faces = 2.0 * beta * np.sum(nb < 0, axis=1)

    W *= c
    ext = c * ext
    tail = ext + c * faces
    A = -W
    A[np.diag_indices(m)] = W.sum(axis=1) + tail
    return NonlocalOperator(A, params, grid, tail, ext, self_cell)


def apply(op: NonlocalOperator, w) -> np.ndarray:
    """Discrete ``(-Delta)^s w`` at the interior nodes; ``w`` must have zero exterior value."""
    return op.A @ as_values(w, op.grid)


def energy(op: NonlocalOperator, w) -> float:
    """Discrete Gagliardo energy ``|w|_s^2 = 2 h^n w^T A w``."""
    v = as_values(w, op.grid)
    return float(2.0 * op.grid.cellvol * v @ (op.A @ v))


def shifted_apply(op: NonlocalOperator, U: Field) -> np.ndarray:
    """``(-Delta)^s`` of a field with constant exterior value: constants are annihilated."""
    return op.A @ (as_values(U, op.grid, require_zero_exterior=False) - U.exterior)


def lambda_max(op: NonlocalOperator, rtol: float = 1e-6, seed: int = 0, maxiter: int = 5000) -> float:
    """Largest eigenvalue of A by power iteration (fixed seed), cached on the operator."""
    if op._lam_max is None:
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(op.size)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(maxiter):
            z = op.A @ v
            new = float(v @ z)
            v = z / np.linalg.norm(z)
            if abs(new - lam) <= rtol * abs(new):
                lam = new
                break
            lam = new
        op._lam_max = lam
    return op._lam_max


def dump_matrix(path, op: NonlocalOperator) -> None:
    """Binary dump: 16-byte header (``b"FLAP"``, u32 size, u32 reserved, 4 zero bytes of
    padding), then the matrix as row-major little-endian float64."""
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC + struct.pack("<III", op.size, 0, 0))
        fh.write(np.ascontiguousarray(op.A, dtype="<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 16:
        raise ValueError(f"{path}: truncated header")
    size, _, _ = struct.unpack("<III", raw[4:16])
    if len(raw) != 16 + 8 * size * size:
        raise ValueError(f"{path}: expected {size}x{size} float64 entries")
    return np.frombuffer(raw[16:], dtype="<f8").reshape(size, size).copy()
