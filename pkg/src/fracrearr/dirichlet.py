"""Homogeneous nonlocal Dirichlet problem and the objective Phi_s(f) = |u_f|_s^2."""

from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, cg

from .grid import Field, as_values
from .operator import NonlocalOperator

DEFAULT_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """An iterative method hit its iteration cap.

    ``residual`` carries the last residual (or duality gap) and ``state`` the
    last iterate when one is available.
    """

    def __init__(self, message: str, residual: float = float("nan"), state=None):
        super().__init__(message)
        self.residual = residual
        self.state = state


def solve(op: NonlocalOperator, f, tol: float = DEFAULT_TOL, method: str = "cg") -> Field:
    """Solve ``A u = f`` for the state with zero exterior data.

    Parameters
    ----------
    op : NonlocalOperator
    f : Field or array_like
        Right-hand side, zero exterior.
    tol : float
        Relative residual target ``||A u - f|| <= tol ||f||``.
    method : {"cg", "cholesky"}
        Jacobi-preconditioned conjugate gradients, or the operator's cached
        dense Cholesky factor.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = as_values(f, op.grid)
    if not np.any(b):
        return Field(np.zeros_like(b))
    if method == "cholesky":
        u = linalg.cho_solve(op.cholesky(), b)
    elif method == "cg":
        diag = np.diag(op.A).copy()
        M = LinearOperator(op.A.shape, matvec=lambda r: r / diag, dtype=float)
        maxiter = 10 * op.size
        u, info = cg(op.A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
        if info != 0:
            res = np.linalg.norm(op.A @ u - b) / np.linalg.norm(b)
            raise ConvergenceError(f"CG did not converge in {maxiter} iterations "
                                   f"(relative residual {res:.3e})", res, u)
    else:
        raise ValueError(f"unknown method {method!r}")
    return Field(u)


def phi(op: NonlocalOperator, f, tol: float = DEFAULT_TOL, method: str = "cg") -> float:
    """``Phi_s(f) = 2 h^n sum_i f_i (u_f)_i``, equal to the energy of ``u_f`` by the weak form."""
    b = as_values(f, op.grid)
    u = solve(op, b, tol, method).values
    return float(2.0 * op.grid.cellvol * b @ u)
