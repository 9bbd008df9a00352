"""Local (s = 1) reference solvers and the s -> 1 sweep of the rearrangement problem."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dirichlet import ConvergenceError
from .grid import Domain, Grid, build_grid
from .kernel import KernelParams
from .operator import DEFAULT_MAX_NODES, NonlocalOperator, assemble
from .rearrangement import (FWOptions, RearrangementClass, RearrangementSolution,
                            intermediate_measure, solve_frank_wolfe)

log = logging.getLogger(__name__)

DEFAULT_S_CAP = 0.97
N_PROBES = 5


def assemble_local(grid: Grid) -> NonlocalOperator:
    """Standard (2n+1)-point Laplacian scaled by ``1/h^2``.

    The Dirichlet value sits on the outer face of each boundary cell: a
    missing neighbour acts as the ghost value ``-u_i``, so a boundary row in
    1D reads ``(3, -1)/h^2``. This keeps the cell-centred scheme second-order
    accurate and is the s -> 1 limit of the normalized nonlocal operator.
    """
    m, h = grid.interior_count, grid.h
    nb = grid.neighbors()
    A = np.zeros((m, m))
    rows = np.repeat(np.arange(m), nb.shape[1])
    cols = nb.ravel()
    inside = cols >= 0
    A[rows[inside], cols[inside]] = -1.0 / h ** 2
    faces = 2.0 * np.sum(nb < 0, axis=1) / h ** 2
    A[np.diag_indices(m)] = nb.shape[1] / h ** 2 + np.sum(nb < 0, axis=1) / h ** 2
    return NonlocalOperator(A, None, grid, faces, np.zeros(m), "local")


def gradient_energy(grid: Grid, w) -> float:
    """Discrete Dirichlet energy ``||grad w||^2 = h^n w^T L w`` with the local operator ``L``."""
    L = assemble_local(grid)
    v = np.asarray(w, dtype=float)
    return float(grid.cellvol * v @ (L.A @ v))


def solve_local_rearrangement(grid: Grid, beta: float, opts: FWOptions | None = None,
                              op: NonlocalOperator | None = None) -> RearrangementSolution:
    """Rearrangement problem for the classical Laplacian, solved with the same Frank-Wolfe code."""
    op = op if op is not None else assemble_local(grid)
    return solve_frank_wolfe(op, RearrangementClass.on(grid, beta), opts)


def probe_profiles(grid: Grid) -> np.ndarray:
    """Five fixed Gaussian test profiles, shape (5, m), width ``|D|^(1/n) / 8``."""
    dom = grid.domain
    sigma = dom.measure ** (1.0 / grid.n) / 8.0
    if grid.n == 1:
        a, b = dom.bounds
        centers = a + (b - a) * np.arange(1, N_PROBES + 1)[:, None] / (N_PROBES + 1)
    else:
        if dom.kind == "disk":
            cx, cy = dom.center
            rx = ry = 0.5 * dom.radius
        else:
            x0, x1, y0, y1 = dom.bounds
            cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            rx, ry = 0.25 * (x1 - x0), 0.25 * (y1 - y0)
        centers = np.array([[cx, cy], [cx - rx, cy], [cx + rx, cy], [cx, cy - ry], [cx, cy + ry]])
    d2 = ((grid.nodes[None, :, :] - centers[:, None, :]) ** 2).sum(axis=-1)
    return np.exp(-0.5 * d2 / sigma ** 2)


@dataclass
class SweepRow:
    s: float
    alpha_s: float = math.nan
    objective: float = math.nan
    state_dist: float = math.nan
    objective_diff: float = math.nan
    density_tests: list = field(default_factory=list)
    frac_measure: float = math.nan
    gap: float = math.nan
    iterations: int = 0
    failed: bool = False
    error: str = ""


@dataclass
class SweepTable:
    rows: list
    reference: SweepRow
    N: int
    beta: float
    eps: float
    solutions: dict = field(default_factory=dict, repr=False)

    def column(self, name: str, include_failed: bool = False) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows if include_failed or not r.failed], dtype=float)

    def s_values(self, include_failed: bool = False) -> np.ndarray:
        return self.column("s", include_failed)

    @property
    def ok(self) -> bool:
        return not any(r.failed for r in self.rows)

    def to_dict(self) -> dict:
        return {"N": self.N, "beta": self.beta, "eps": self.eps,
                "reference": asdict(self.reference), "rows": [asdict(r) for r in self.rows]}

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_csv(self, path) -> None:
        k = len(self.reference.density_tests)
        header = ["s", "alpha_s", "objective", "state_dist", "objective_diff", "frac_measure",
                  "gap", "iterations", "failed"] + [f"density_test_{i}" for i in range(k)]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for r in self.rows:
                tests = r.density_tests or [math.nan] * k
                wr.writerow([_fmt(r.s), _fmt(r.alpha_s), _fmt(r.objective), _fmt(r.state_dist),
                             _fmt(r.objective_diff), _fmt(r.frac_measure), _fmt(r.gap), r.iterations,
                             int(r.failed)] + [_fmt(t) for t in tests])

    def write_gnuplot(self, directory) -> list:
        """One two-column ``s value`` file per scalar metric; returns the paths written."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in ("alpha_s", "objective", "state_dist", "objective_diff", "frac_measure"):
            p = directory / f"{name}.dat"
            with open(p, "w") as fh:
                fh.write(f"# s {name}\n")
                for r in self.rows:
                    if not r.failed:
                        fh.write(f"{_fmt(r.s)} {_fmt(getattr(r, name))}\n")
            paths.append(p)
        return paths


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _l2(grid: Grid, v: np.ndarray) -> float:
    return float(np.sqrt(grid.cellvol * v @ v))


def s_sweep(domain: Domain, N: int, beta: float, s_list, opts: FWOptions | None = None, *,
            normalized: bool = True, s_cap: float = DEFAULT_S_CAP, eps: float = 1e-3,
            self_cell: str = "taylor", workers: int = 1, max_nodes: int = DEFAULT_MAX_NODES,
            keep_solutions: bool = False) -> SweepTable:
    """Solve the fractional rearrangement problem for each ``s`` and compare with the local problem.

    Parameters
    ----------
    domain, N : grid specification.
    beta : float
        Budget.
    s_list : sequence of float
        Strictly increasing values in (0, s_cap].
    opts : FWOptions, optional
        Passed to every Frank-Wolfe run, including the local one.
    normalized : bool
        Must be True; without the constant C(n, s) the energies blow up as s -> 1.
    s_cap : float
        Largest admissible s (quadrature accuracy degrades as s -> 1).
    eps : float
        Threshold of the intermediate-density measure ``|{eps < f < 1 - eps}|``.
    workers : int
        Rows run in a thread pool when > 1; the table is assembled in order.

    Returns
    -------
    SweepTable
        A row that fails to converge is kept with ``failed=True`` and NaN metrics.
    """
    if not normalized:
        raise ValueError("the s -> 1 sweep requires the normalized kernel")
    s_arr = np.asarray(list(s_list), dtype=float)
    if s_arr.size == 0 or np.any(s_arr <= 0) or np.any(s_arr > s_cap) or np.any(np.diff(s_arr) <= 0):
        raise ValueError(f"s_list must be strictly increasing in (0, {s_cap}]")
    grid = build_grid(domain, N)
    probes = probe_profiles(grid)
    h = grid.cellvol

    local = solve_local_rearrangement(grid, beta, opts)
    f_loc, u_loc = local.f_hat.values, local.u_hat.values
    reference = SweepRow(s=1.0, alpha_s=local.alpha, objective=local.objective, state_dist=0.0,
                         objective_diff=0.0, density_tests=[0.0] * len(probes),
                         frac_measure=intermediate_measure(grid, local.f_hat, eps),
                         gap=local.gap, iterations=local.iterations)
    cls = RearrangementClass.on(grid, beta)

    def run(s: float):
        op = assemble(grid, KernelParams(grid.n, float(s), normalized=True), self_cell, max_nodes)
        try:
            sol = solve_frank_wolfe(op, cls, opts)
        except ConvergenceError as exc:
            log.warning("sweep row s=%g failed: %s", s, exc)
            return SweepRow(s=float(s), failed=True, error=str(exc)), None
        f, u = sol.f_hat.values, sol.u_hat.values
        row = SweepRow(
            s=float(s), alpha_s=sol.alpha, objective=sol.objective,
            state_dist=_l2(grid, u - u_loc), objective_diff=abs(sol.objective - local.objective),
            density_tests=[float(h * (f - f_loc) @ p) for p in probes],
            frac_measure=intermediate_measure(grid, sol.f_hat, eps), gap=sol.gap,
            iterations=sol.iterations)
        return row, sol

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, s_arr))
    else:
        results = [run(s) for s in s_arr]
    table = SweepTable([r for r, _ in results], reference, N, float(beta), eps)
    if keep_solutions:
        table.solutions = {r.s: sol for r, sol in results if sol is not None}
        table.solutions[1.0] = local
    return table
