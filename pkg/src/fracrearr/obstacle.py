"""Normalized fractional obstacle problem with exterior value alpha.

The unknown ``U`` equals ``alpha`` outside D. Everything is computed on the
shifted variable ``w = U - alpha`` (zero exterior), for which the discrete
functional is

    J_h(w) = 1/2 h^n w^T A w + h^n sum_i (w_i + alpha)^+ ,

whose optimality condition is ``-(A w)_i in [chi{U_i > 0}, chi{U_i >= 0}]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dirichlet import ConvergenceError
from .grid import Field, as_values
from .operator import NonlocalOperator, lambda_max
from .rearrangement import RearrangementSolution


class NotSubharmonicError(ValueError):
    """The nonlinear residual is undefined for a state that is not s-subharmonic."""


@dataclass
class ObstacleOptions:
    tol: float = 1e-13
    max_iter: int = 200000
    accelerate: bool = True
    band: float | None = None
    subharmonic_tol: float = 1e-8
    init: str = "zero"
    seed: int = 0


@dataclass
class SubharmonicReport:
    max_g: float
    max_g_plus: float
    tol: float

    @property
    def subharmonic(self) -> bool:
        return self.max_g <= self.tol

    @property
    def passed(self) -> bool:
        """U and U^+ are both s-subharmonic (the positive-part lemma holds)."""
        return self.subharmonic and self.max_g_plus <= self.tol


@dataclass
class ObstacleSolution:
    U: Field
    alpha: float
    J_value: float
    iterations: int
    band: float
    residual_lower: np.ndarray | None = field(default=None, repr=False)
    residual_upper: np.ndarray | None = field(default=None, repr=False)
    nonlinear_residual: np.ndarray | None = field(default=None, repr=False)
    subharmonic: SubharmonicReport | None = None
    free_boundary: np.ndarray | None = field(default=None, repr=False)
    collar: np.ndarray | None = field(default=None, repr=False)
    history: list = field(default_factory=list, repr=False)


def J_value(op: NonlocalOperator, U: Field) -> float:
    """Discrete obstacle functional of a state with exterior value ``U.exterior``."""
    w = U.shifted()
    h = op.grid.cellvol
    return float(0.5 * h * w @ (op.A @ w) + h * np.maximum(U.values, 0.0).sum())


def _prox(z: np.ndarray, alpha: float, t: float) -> np.ndarray:
    # prox of t * (z + alpha)^+
    out = z.copy()
    upper = z > -alpha + t
    kink = (z >= -alpha) & ~upper
    out[upper] -= t
    out[kink] = -alpha
    return out


def minimize_J(op: NonlocalOperator, alpha: float, opts: ObstacleOptions | None = None) -> ObstacleSolution:
    """Proximal gradient on ``J_h`` with step ``1/lambda_max(A)``.

    Parameters
    ----------
    op : NonlocalOperator
    alpha : float
        Exterior value, ``alpha >= 0``.
    opts : ObstacleOptions, optional
        ``init="zero"`` starts from ``w = 0`` (U = alpha), ``init="contact"``
        from ``w = -alpha`` (U = 0). ``accelerate`` switches on FISTA with
        gradient restart; without it J decreases monotonically.

    Returns
    -------
    ObstacleSolution
        With residual fields, subharmonicity report and free-boundary cells
        filled in.
    """
    opts = opts or ObstacleOptions()
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    m = op.size
    band = 1e-8 * alpha if opts.band is None else opts.band
    if alpha == 0:
        U = Field(np.zeros(m), 0.0)
        return _finish(op, U, 0, band, opts, [])
    # 1% margin: power iteration approaches lambda_max from below
    t = 1.0 / (1.01 * lambda_max(op, seed=opts.seed))
    A = op.A
    if opts.init == "zero":
        w = np.zeros(m)
    elif opts.init == "contact":
        w = np.full(m, -float(alpha))
    else:
        raise ValueError(f"unknown init {opts.init!r}")
    y, theta = w.copy(), 1.0
    history = []
    for it in range(1, opts.max_iter + 1):
        w_new = _prox(y - t * (A @ y), alpha, t)
        step = float(np.linalg.norm(w_new - w))
        if opts.accelerate:
            if (y - w_new) @ (w_new - w) > 0:
                theta, y = 1.0, w_new.copy()
            else:
                theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
                y = w_new + ((theta - 1.0) / theta_new) * (w_new - w)
                theta = theta_new
        else:
            y = w_new
        scale = max(1.0, float(np.linalg.norm(w)))
        w = w_new
        if it % 10 == 0 or step <= opts.tol * scale:
            history.append({"iteration": it, "step": step,
                            "J": J_value(op, Field(w + alpha, alpha))})
        if step <= opts.tol * scale:
            break
    else:
        raise ConvergenceError(f"proximal gradient step {step:.3e} above tolerance "
                               f"after {opts.max_iter} iterations", step, w + alpha)
    return _finish(op, Field(w + alpha, float(alpha)), it, band, opts, history)


def _finish(op, U, iterations, band, opts, history) -> ObstacleSolution:
    sol = ObstacleSolution(U, U.exterior, J_value(op, U), iterations, band, history=history)
    sol.residual_lower, sol.residual_upper = residual_band(op, sol)
    sol.subharmonic = subharmonic_report(op, U, opts.subharmonic_tol)
    sol.free_boundary, sol.collar = free_boundary_cells(op, U, band)
    if sol.subharmonic.passed:
        sol.nonlinear_residual = residual_nonlinear(op, sol)
    return sol


def _state(sol_or_U) -> tuple[Field, float]:
    if isinstance(sol_or_U, ObstacleSolution):
        return sol_or_U.U, sol_or_U.band
    return sol_or_U, 1e-8 * sol_or_U.exterior


def residual_band(op: NonlocalOperator, sol, band: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Violations of ``chi{U > 0} <= -(-Delta)^s U <= chi{U >= 0}``.

    With ``g = -A(U - alpha)``: ``lower = max(0, chi{U > band} - g)`` and
    ``upper = max(0, g - chi{U >= -band})``.
    """
    U, default_band = _state(sol)
    theta = default_band if band is None else band
    g = -op.A @ U.shifted()
    lower = np.maximum(0.0, (U.values > theta).astype(float) - g)
    upper = np.maximum(0.0, g - (U.values >= -theta).astype(float))
    return lower, upper


def subharmonic_report(op: NonlocalOperator, U: Field, tol: float = 1e-8) -> SubharmonicReport:
    """Largest values of ``(-Delta)^s U`` and ``(-Delta)^s U^+`` over D."""
    g = op.A @ U.shifted()
    plus = np.maximum(U.values, 0.0) - max(U.exterior, 0.0)
    g_plus = op.A @ plus
    return SubharmonicReport(float(g.max()), float(g_plus.max()), tol)


def residual_nonlinear(op: NonlocalOperator, sol, band: float | None = None, tol: float = 1e-8) -> np.ndarray:
    """Pointwise residual of ``-L U - chi{U <= 0} min(-L U^+, 1) - chi{U > 0}``, ``L = (-Delta)^s``.

    Raises
    ------
    NotSubharmonicError
        If ``U`` or ``U^+`` is not s-subharmonic within ``tol``.
    """
    U, default_band = _state(sol)
    theta = default_band if band is None else band
    report = subharmonic_report(op, U, tol)
    if not report.passed:
        raise NotSubharmonicError(f"state is not s-subharmonic: max (-Delta)^s U = {report.max_g:.3e}, "
                                  f"max (-Delta)^s U^+ = {report.max_g_plus:.3e} (tol {tol:.1e})")
    g = op.A @ U.shifted()
    g_plus = op.A @ (np.maximum(U.values, 0.0) - max(U.exterior, 0.0))
    contact = U.values <= theta
    return -g - contact * np.minimum(-g_plus, 1.0) - (~contact).astype(float)


def free_boundary_cells(op: NonlocalOperator, U: Field, band: float) -> tuple[np.ndarray, np.ndarray]:
    """Cells whose positivity class differs from an axis neighbour, and their one-cell collar mask."""
    nb = op.grid.neighbors()
    positive = U.values > band
    valid = nb >= 0
    flips = np.zeros(op.size, dtype=bool)
    for col in range(nb.shape[1]):
        v = valid[:, col]
        flips[v] |= positive[v] != positive[nb[v, col]]
    collar = flips.copy()
    for col in range(nb.shape[1]):
        v = valid[:, col]
        collar[v] |= flips[nb[v, col]]
    return np.flatnonzero(flips), collar


def masked_max(values: np.ndarray, exclude: np.ndarray | None) -> float:
    """Max norm outside ``exclude`` (0 when every cell is excluded)."""
    v = np.abs(values) if exclude is None else np.abs(values[~exclude])
    return float(v.max()) if v.size else 0.0


@dataclass
class EquivalenceMetrics:
    sup_diff: float
    l2_diff: float
    J_gap: float
    J_value: float
    alpha_rearrangement: float
    alpha_obstacle: float

    @property
    def alpha_matches(self) -> bool:
        return self.alpha_rearrangement == self.alpha_obstacle

    @property
    def degenerate(self) -> bool:
        """Both levels vanish; the comparison then carries no information."""
        return self.alpha_rearrangement == 0.0 and self.alpha_obstacle == 0.0

    def mismatch(self, sup_rtol: float = 1e-3) -> bool:
        return not self.alpha_matches or self.degenerate or self.sup_diff > sup_rtol * self.alpha_rearrangement

    def passed(self, sup_rtol: float = 1e-3, J_rtol: float = 1e-8) -> bool:
        return not self.mismatch(sup_rtol) and self.J_gap <= J_rtol * abs(self.J_value)


def equivalence_check(op: NonlocalOperator, rearr: RearrangementSolution, obst: ObstacleSolution) -> EquivalenceMetrics:
    """Compare the obstacle minimizer with ``alpha - u_hat`` from the rearrangement problem."""
    u = as_values(rearr.u_hat, op.grid)
    U = as_values(obst.U, op.grid, require_zero_exterior=False)
    if u.shape != U.shape:
        raise ValueError("rearrangement and obstacle states live on different grids")
    candidate = Field(rearr.alpha - u, rearr.alpha)
    diff = candidate.values - U
    J_obst = J_value(op, obst.U)
    return EquivalenceMetrics(
        sup_diff=float(np.abs(diff).max()),
        l2_diff=float(np.sqrt(op.grid.cellvol * diff @ diff)),
        J_gap=J_obst - J_value(op, candidate),
        J_value=J_obst,
        alpha_rearrangement=float(rearr.alpha),
        alpha_obstacle=float(obst.alpha),
    )
