"""Kernel parameters, the normalizing constant C(n, s) and closed-form oracles."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special


class ParameterError(ValueError):
    """Raised for an invalid dimension or fractional order."""


def check_params(n: int, s: float) -> None:
    if n not in (1, 2):
        raise ParameterError(f"dimension must be 1 or 2, got {n}")
    if not (0.0 < s < 1.0):
        raise ParameterError(f"fractional order must lie in (0, 1), got {s}")


@dataclass(frozen=True)
class KernelParams:
    """Kernel |z|^(-n-2s), optionally scaled by C(n, s)."""

    n: int
    s: float
    normalized: bool = False

    def __post_init__(self):
        check_params(self.n, self.s)

    @property
    def constant(self) -> float:
        """Multiplicative constant of the operator (1 when not normalized)."""
        return normalization_constant(self.n, self.s) if self.normalized else 1.0


# Hankel asymptotic coefficients of J0 used beyond _BESSEL_CUTOFF
_BESSEL_CUTOFF = 40.0


def _symbol_integral_1d(s: float) -> float:
    # (1 - cos t) / t^2 = 2 sin^2(t/2) / t^2 is smooth; the t^(1-2s) factor goes into the weight
    def smooth(t):
        if t == 0.0:
            return 0.5
        return 2.0 * math.sin(0.5 * t) ** 2 / (t * t)

    inner, _ = integrate.quad(smooth, 0.0, 1.0, weight="alg", wvar=(1.0 - 2.0 * s, 0.0),
                              epsabs=1e-13, epsrel=1e-12)
    # int_1^inf cos(t) t^(-p) dt after one integration by parts (faster decay for QAWF)
    p = 1.0 + 2.0 * s
    by_parts, _ = integrate.quad(lambda t: t ** (-p - 1.0), 1.0, np.inf, weight="sin", wvar=1.0,
                                 epsabs=1e-13, limlst=100)
    osc = -math.sin(1.0) + p * by_parts
    tail = 1.0 / (2.0 * s) - osc
    return 2.0 * (inner + tail)


def _symbol_integral_2d(s: float) -> float:
    # polar coordinates: the angular integral of 1 - cos(r cos th) is 2 pi (1 - J0(r))
    p = 1.0 + 2.0 * s

    def smooth(r):
        # (1 - J0(r)) / r^2 by its power series on [0, 1]; avoids cancellation near 0
        term, total = 0.25, 0.25
        for k in range(2, 12):
            term *= -0.25 * r * r / (k * k)
            total += term
        return total

    inner, _ = integrate.quad(smooth, 0.0, 1.0, weight="alg", wvar=(1.0 - 2.0 * s, 0.0),
                              epsabs=1e-13, epsrel=1e-12)
    mid, _ = integrate.quad(lambda r: special.j0(r) * r ** (-p), 1.0, _BESSEL_CUTOFF,
                            limit=400, epsabs=1e-13, epsrel=1e-12)

    def amp_p(r):
        return 1.0 - 9.0 / (128.0 * r * r) + 3675.0 / (32768.0 * r ** 4)

    def amp_q(r):
        return -1.0 / (8.0 * r) + 75.0 / (1024.0 * r ** 3)

    # J0(r) ~ (pi r)^(-1/2) [(P + Q) cos r + (P - Q) sin r]
    far_c, _ = integrate.quad(lambda r: (amp_p(r) + amp_q(r)) * r ** (-p - 0.5), _BESSEL_CUTOFF,
                              np.inf, weight="cos", wvar=1.0, epsabs=1e-15)
    far_s, _ = integrate.quad(lambda r: (amp_p(r) - amp_q(r)) * r ** (-p - 0.5), _BESSEL_CUTOFF,
                              np.inf, weight="sin", wvar=1.0, epsabs=1e-15)
    far = (far_c + far_s) / math.sqrt(math.pi)
    return 2.0 * math.pi * (inner + 1.0 / (2.0 * s) - mid - far)


@functools.lru_cache(maxsize=256)
def normalization_constant(n: int, s: float) -> float:
    """Return C(n, s), the inverse of the integral of (1 - cos z_1) / |z|^(n+2s).

    The integral is evaluated numerically (split at |z| = 1, power-law tail
    integrated analytically, oscillatory remainder by Fourier quadrature), so
    this routine is independent of :func:`normalization_constant_closed_form`.
    """
    check_params(n, s)
    return 1.0 / (_symbol_integral_1d(s) if n == 1 else _symbol_integral_2d(s))


def normalization_constant_closed_form(n: int, s: float) -> float:
    """s 4^s Gamma(n/2 + s) / (pi^(n/2) Gamma(1 - s))."""
    check_params(n, s)
    return s * 4.0 ** s * special.gamma(0.5 * n + s) / (math.pi ** (0.5 * n) * special.gamma(1.0 - s))


def getoor_constant(n: int, s: float) -> float:
    """Height of the solution of (-Delta)^s u = 1 on the unit ball (normalized operator)."""
    check_params(n, s)
    return special.gamma(0.5 * n) / (4.0 ** s * special.gamma(0.5 * n + s) * special.gamma(1.0 + s))


def getoor_reference(params: KernelParams, x) -> np.ndarray:
    """Explicit solution of ``(-Delta)^s u = 1`` in the unit ball, ``u = 0`` outside.

    Parameters
    ----------
    params : KernelParams
        When ``params.normalized`` is false the operator lacks the factor
        C(n, s), so the solution is C(n, s) times the normalized one.
    x : array_like
        Points, shape ``(m,)`` in 1D or ``(m, n)``.

    Returns
    -------
    numpy.ndarray
        ``kappa * (1 - |x|^2)_+^s`` at every point.
    """
    x = np.asarray(x, dtype=float)
    if params.n == 1:
        r2 = x.reshape(x.shape[0], -1)[:, 0] ** 2 if x.ndim > 1 else x ** 2
    else:
        x2 = np.atleast_2d(x)
        r2 = np.sum(x2 * x2, axis=-1)
    kappa = getoor_constant(params.n, params.s)
    if not params.normalized:
        kappa *= normalization_constant(params.n, params.s)
    return kappa * np.maximum(1.0 - r2, 0.0) ** params.s
