"""Minimization of Phi_s over the class {0 <= f <= 1, int f = beta} and structure checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dirichlet import ConvergenceError
from .grid import Field, Grid, as_values
from .operator import NonlocalOperator

log = logging.getLogger(__name__)

# budget arithmetic snaps to integers within this many cells
_CELL_SNAP = 1e-9
# densities this close to 0 or 1 count as sitting on the bound
_BOUND_SNAP = 1e-12

FW_VARIANTS = ("face", "pairwise", "vanilla")


@dataclass(frozen=True)
class RearrangementClass:
    """Densities with values in [0, 1] and total mass ``beta`` on a grid of measure ``measure``."""

    beta: float
    measure: float
    cellvol: float

    def __post_init__(self):
        if not (0.0 < self.beta <= self.measure * (1 + 1e-12)):
            raise ValueError(f"budget beta={self.beta} must lie in (0, |D|={self.measure}]")

    @classmethod
    def on(cls, grid: Grid, beta: float) -> RearrangementClass:
        return cls(float(beta), grid.measure, grid.cellvol)

    @classmethod
    def fraction(cls, grid: Grid, frac: float) -> RearrangementClass:
        return cls.on(grid, frac * grid.measure)

    def contains(self, f, tol: float = 1e-10) -> bool:
        v = as_values(f, require_zero_exterior=False)
        return bool(v.min() >= -tol and v.max() <= 1 + tol
                    and abs(self.cellvol * v.sum() - self.beta) <= tol * self.measure)


@dataclass
class FWOptions:
    gap_tol: float = 1e-6
    max_iter: int = 5000
    variant: str = "face"
    refresh: int = 50


@dataclass
class PGOptions:
    tol: float = 1e-10
    max_iter: int = 20000
    step: float | None = None
    accelerate: bool = True
    seed: int = 0


@dataclass
class RearrangementSolution:
    f_hat: Field
    u_hat: Field
    alpha: float
    gap: float
    iterations: int
    objective: float
    history: list = field(default_factory=list, repr=False)
    method: str = "frank_wolfe"


def bathtub_lmo(u, beta: float, cellvol: float) -> np.ndarray:
    """Minimizer of ``h^n sum u_i f_i`` over the class: fill the lowest values of ``u`` first.

    Ties are broken by ascending node index. At most one cell receives a
    fractional value.
    """
    u = as_values(u, require_zero_exterior=False)
    m = u.shape[0]
    cells = beta / cellvol
    if cells > m * (1 + 1e-12):
        raise ValueError(f"budget {beta} exceeds the domain measure {m * cellvol}")
    full = int(np.floor(cells))
    rem = cells - full
    if rem > 1 - _CELL_SNAP:
        full, rem = full + 1, 0.0
    elif rem < _CELL_SNAP:
        rem = 0.0
    full = min(full, m)
    order = np.argsort(u, kind="stable")
    f = np.zeros(m)
    f[order[:full]] = 1.0
    if rem > 0 and full < m:
        f[order[full]] = rem
    return f


def project_capped_box(g, beta: float, cellvol: float, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Euclidean projection onto the class: ``clip(g - lam, 0, 1)`` with ``lam`` found by bisection."""
    g = as_values(g, require_zero_exterior=False)
    measure = g.shape[0] * cellvol
    if beta >= measure:
        return np.ones_like(g)
    lo, hi = g.min() - 1.0, g.max()

    def excess(lam):
        return cellvol * np.clip(g - lam, 0.0, 1.0).sum() - beta

    # bisect to the floating-point resolution of the bracket; tol only guards the result
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        e = excess(mid)
        if e == 0.0:
            break
        if e > 0:
            lo = mid
        else:
            hi = mid
    if abs(excess(mid)) > tol * measure:
        raise ArithmeticError(f"capped-box projection missed the budget by {excess(mid):.3e}")
    return np.clip(g - mid, 0.0, 1.0)


def extract_alpha(sol_or_u) -> float:
    """Plateau level: the maximum of the optimal state."""
    if isinstance(sol_or_u, RearrangementSolution):
        u = sol_or_u.u_hat.values
    else:
        u = as_values(sol_or_u, require_zero_exterior=False)
    return float(np.max(u))


def _objective(cellvol, f, u):
    return 2.0 * cellvol * float(f @ u)


def _in_face_step(op: NonlocalOperator, f: np.ndarray, cls: RearrangementClass):
    """One step toward the minimizer of Phi over the affine hull of the face of ``f``.

    Cells at 0 or 1 stay fixed; on the free cells the minimizer has a
    constant state ``u = lam``. Writing ``C`` for fixed and ``F`` for free
    cells, ``u_C = A_CC^{-1}(f_C - lam A_CF 1)`` and
    ``f_F = A_FC u_C + lam A_FF 1``, which is affine in ``lam``; the mass
    constraint fixes ``lam``. The step is cut where a free density reaches
    a bound. Returns ``(f_new, reached)``; ``reached`` is false when the
    face has no free direction or the step was cut.
    """
    A = op.A
    free = (f > _BOUND_SNAP) & (f < 1.0 - _BOUND_SNAP)
    if np.count_nonzero(free) < 2:
        return f, False
    fixed = ~free
    f_fixed = np.where(f[fixed] >= 0.5, 1.0, 0.0)
    ones = np.ones(np.count_nonzero(free))
    if np.any(fixed):
        A_cc = A[np.ix_(fixed, fixed)]
        A_cf = A[np.ix_(fixed, free)]
        chol = linalg.cho_factor(A_cc, lower=True)
        a = linalg.cho_solve(chol, f_fixed)
        b = linalg.cho_solve(chol, A_cf @ ones)
        p = A_cf.T @ a
        q = A[np.ix_(free, free)] @ ones - A_cf.T @ b
    else:
        p = np.zeros_like(ones)
        q = A @ ones
    mass = cls.beta / cls.cellvol - f_fixed.sum()
    lam = (mass - p.sum()) / q.sum()
    target = f.copy()
    target[fixed] = f_fixed
    target[free] = p + lam * q
    d = target - f
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(d > 0, (1.0 - f) / d, np.inf)
        down = np.where(d < 0, -f / d, np.inf)
    gmax = float(min(up[free].min(), down[free].min(), 1.0))
    new = f + gmax * d
    if gmax < 1.0:
        # snap the coordinates that hit a bound
        hit = free & (np.minimum(up, down) <= gmax * (1 + 1e-12))
        new[hit] = np.where(d[hit] > 0, 1.0, 0.0)
        new[fixed] = f_fixed
        return new, False
    return new, True


def _minimize_on_face(op: NonlocalOperator, f: np.ndarray, cls: RearrangementClass, max_steps: int = 10000):
    """Repeat in-face steps until the face optimum is reached; never increases Phi."""
    chol = op.cholesky()
    h = cls.cellvol
    u = linalg.cho_solve(chol, f)
    obj = _objective(h, f, u)
    steps = 0
    for steps in range(1, max_steps + 1):
        new, reached = _in_face_step(op, f, cls)
        if new is f:
            break
        u_new = linalg.cho_solve(chol, new)
        obj_new = _objective(h, new, u_new)
        if obj_new > obj:
            break
        f, u, obj = new, u_new, obj_new
        if reached:
            break
    return f, u, steps


def solve_frank_wolfe(op: NonlocalOperator, cls: RearrangementClass,
                      opts: FWOptions | None = None, f0=None) -> RearrangementSolution:
    """Frank-Wolfe with the bathtub linear minimization oracle and exact line search.

    The gradient of ``Phi(f) = 2 h^n f^T A^{-1} f`` in the ``h^n``-weighted
    inner product is ``4 u_f``; the gap ``4 h^n u.(f - f_lmo)`` bounds
    ``Phi(f) - min Phi``. Each iteration costs one solve with the cached
    Cholesky factor; the state is updated linearly and refreshed from a
    fresh solve every ``opts.refresh`` iterations.

    ``variant="vanilla"`` moves toward the oracle vertex only and zigzags
    once the iterate sits on a face whose interior holds the optimum.
    ``variant="pairwise"`` keeps the active atoms of the current convex
    combination and shifts weight from the worst active atom (largest
    ``u.atom``) to the oracle vertex.
    ``variant="face"`` (default) follows every vanilla step with exact
    minimization over the minimal face of the iterate (see
    :func:`_in_face_step`); the iterate then jumps between face optima and
    the method terminates after few oracle calls.
    """
    opts = opts or FWOptions()
    if opts.variant not in FW_VARIANTS:
        raise ValueError(f"unknown variant {opts.variant!r}")
    h = cls.cellvol
    chol = op.cholesky()
    m = op.size
    f = np.full(m, cls.beta / cls.measure) if f0 is None else as_values(f0, op.grid).copy()
    u = linalg.cho_solve(chol, f)
    phi0 = _objective(h, f, u)
    atoms = [f.copy()]
    weights = [1.0]
    keys = {f.tobytes(): 0}
    history = []
    gap = np.inf
    for it in range(opts.max_iter + 1):
        if it and it % opts.refresh == 0:
            u = linalg.cho_solve(chol, f)
        s = bathtub_lmo(u, cls.beta, h)
        gap = 4.0 * h * float(u @ (f - s))
        obj = _objective(h, f, u)
        history.append({"iteration": it, "objective": obj, "gap": gap, "atoms": len(atoms)})
        if gap <= opts.gap_tol * phi0:
            break
        if it == opts.max_iter:
            raise ConvergenceError(f"Frank-Wolfe gap {gap:.3e} above {opts.gap_tol * phi0:.3e} "
                                   f"after {opts.max_iter} iterations", gap, f)
        if opts.variant != "pairwise":
            d = s - f
            gmax = 1.0
        else:
            scores = np.array([a @ u for a in atoms])
            j = int(np.argmax(scores))
            d = s - atoms[j]
            gmax = weights[j]
        v = linalg.cho_solve(chol, d)
        curv = float(d @ v)
        slope = float(d @ u)
        if curv <= 0 or slope >= 0:
            # no descent along d up to round-off; the gap test above decides termination
            history[-1]["stalled"] = True
            u = linalg.cho_solve(chol, f)
            continue
        gamma = min(-slope / curv, gmax)
        f = f + gamma * d
        u = u + gamma * v
        if opts.variant == "face":
            f, u, n_face = _minimize_on_face(op, f, cls)
            history[-1]["face_steps"] = n_face
        if opts.variant == "pairwise":
            key = s.tobytes()
            if key in keys:
                weights[keys[key]] += gamma
            else:
                keys[key] = len(atoms)
                atoms.append(s)
                weights.append(gamma)
            weights[j] -= gamma
            if weights[j] <= 1e-15 or gamma == gmax:
                del atoms[j], weights[j]
                keys = {a.tobytes(): i for i, a in enumerate(atoms)}
            # keep f an exact convex combination up to round-off
            np.clip(f, 0.0, 1.0, out=f)

    u = linalg.cho_solve(chol, f)
    f_field, u_field = Field(f), Field(u)
    return RearrangementSolution(f_field, u_field, extract_alpha(u), max(gap, 0.0), it,
                                 _objective(h, f, u), history, "frank_wolfe")


def _inverse_top_eigenvalue(op: NonlocalOperator, iters: int = 20, seed: int = 0) -> float:
    chol = op.cholesky()
    v = np.random.default_rng(seed).standard_normal(op.size)
    lam = 0.0
    for _ in range(iters):
        v /= np.linalg.norm(v)
        z = linalg.cho_solve(chol, v)
        lam = float(v @ z)
        v = z
    return lam


def solve_projected_gradient(op: NonlocalOperator, cls: RearrangementClass,
                             opts: PGOptions | None = None, f0=None) -> RearrangementSolution:
    """Projected gradient ``f <- P(f - t u_f)`` onto the class.

    The default step is ``1 / lambda_max(A^{-1})`` from 20 power iterations,
    i.e. one over the Lipschitz constant of the gradient ``4 u_f`` scaled by
    1/4. With ``accelerate`` the FISTA extrapolation with gradient-based
    restart is used. Stops when ``||f_{k+1} - f_k||_2 <= opts.tol``.
    """
    opts = opts or PGOptions()
    h = cls.cellvol
    chol = op.cholesky()
    t = opts.step if opts.step is not None else 1.0 / _inverse_top_eigenvalue(op, seed=opts.seed)
    f = np.full(op.size, cls.beta / cls.measure) if f0 is None else as_values(f0, op.grid).copy()
    y, theta = f.copy(), 1.0
    history = []
    for it in range(1, opts.max_iter + 1):
        uy = linalg.cho_solve(chol, y)
        f_new = project_capped_box(y - t * uy, cls.beta, h)
        step = float(np.linalg.norm(f_new - f))
        if opts.accelerate:
            if (y - f_new) @ (f_new - f) > 0:
                # restart: momentum points uphill
                theta, y = 1.0, f_new.copy()
            else:
                theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
                y = f_new + ((theta - 1.0) / theta_new) * (f_new - f)
                theta = theta_new
        else:
            y = f_new
        f = f_new
        if it % 10 == 0:
            history.append({"iteration": it, "step": step})
        if step <= opts.tol:
            break
    else:
        raise ConvergenceError(f"projected gradient step {step:.3e} above {opts.tol:.3e} "
                               f"after {opts.max_iter} iterations", step, f)
    u = linalg.cho_solve(chol, f)
    s = bathtub_lmo(u, cls.beta, h)
    gap = 4.0 * h * float(u @ (f - s))
    return RearrangementSolution(Field(f), Field(u), extract_alpha(u), max(gap, 0.0), it,
                                 _objective(h, f, u), history, "projected_gradient")


@dataclass
class StructureReport:
    """Named checks of the optimality structure with signed margins (>= 0 means pass)."""

    checks: dict
    margins: dict
    alpha: float
    tolerances: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def lines(self) -> list[str]:
        return [f"{'PASS' if ok else 'FAIL'} {name}: margin {self.margins[name]:.3e}"
                for name, ok in self.checks.items()]


def verify_structure(op: NonlocalOperator, sol: RearrangementSolution, delta_level: float | None = None,
                     eps_density: float = 1e-3, eta_pos: float = 1e-8) -> StructureReport:
    """Check the structure of an optimal density and state.

    (a) ``0 <= u <= alpha`` up to ``delta_level``;
    (b) ``{u < alpha - delta} subset {f >= 1 - eps}``;
    (c) ``{f <= 1 - eps} subset {|u - alpha| <= delta}``;
    (d) ``f >= eta_pos`` everywhere;
    (e) the set ``{eps < f < 1 - eps}`` has positive measure, i.e. ``f`` is
        not an indicator function.

    ``delta_level`` defaults to ``1e-3 * alpha``.
    """
    f = sol.f_hat.values
    u = sol.u_hat.values
    alpha = sol.alpha
    delta = 1e-3 * alpha if delta_level is None else delta_level
    h = op.grid.cellvol

    low = u < alpha - delta
    not_full = f <= 1.0 - eps_density
    mid = (f > eps_density) & (f < 1.0 - eps_density)
    margins = {
        "bounds": float(min(u.min() + delta, alpha + delta - u.max())),
        "below_plateau_full": float((f[low] - (1.0 - eps_density)).min()) if low.any() else np.inf,
        "partial_on_plateau": float(delta - np.abs(u[not_full] - alpha).max()) if not_full.any() else np.inf,
        "positive": float(f.min() - eta_pos),
        "not_characteristic": float(h * np.count_nonzero(mid)),
    }
    checks = {k: (v > 0 if k == "not_characteristic" else v >= 0) for k, v in margins.items()}
    tols = {"delta_level": delta, "eps_density": eps_density, "eta_pos": eta_pos}
    return StructureReport(checks, margins, alpha, tols)


def intermediate_measure(grid: Grid, f, eps: float = 1e-3) -> float:
    """Measure of ``{eps < f < 1 - eps}``."""
    v = as_values(f, require_zero_exterior=False)
    return float(grid.cellvol * np.count_nonzero((v > eps) & (v < 1.0 - eps)))
