import numpy as np
import pytest

from fracrearr.dirichlet import ConvergenceError, phi, solve
from fracrearr.grid import Domain, build_grid
from fracrearr.kernel import KernelParams, getoor_reference
from fracrearr.operator import assemble, energy


@pytest.fixture(scope="module")
def op1d():
    return assemble(build_grid(Domain.interval(), 96), KernelParams(1, 0.4, True))


@pytest.fixture(scope="module")
def op2d():
    return assemble(build_grid(Domain.disk(), 14), KernelParams(2, 0.6))


def test_zero_rhs(op1d):
    u = solve(op1d, np.zeros(op1d.size))
    assert not u.values.any() and u.exterior == 0.0
    assert phi(op1d, np.zeros(op1d.size)) == 0.0


@pytest.mark.parametrize("method", ["cg", "cholesky"])
def test_residual_contract(op1d, rng, method):
    f = rng.random(op1d.size)
    u = solve(op1d, f, tol=1e-10, method=method)
    assert np.linalg.norm(op1d.A @ u.values - f) <= 1e-10 * np.linalg.norm(f)


def test_linearity(op2d, rng):
    f1, f2 = rng.random(op2d.size), rng.standard_normal(op2d.size)
    u = solve(op2d, f1 + f2, tol=1e-12).values
    u12 = solve(op2d, f1, tol=1e-12).values + solve(op2d, f2, tol=1e-12).values
    np.testing.assert_allclose(u, u12, rtol=0, atol=1e-9 * np.abs(u).max())


def test_getoor_at_512():
    g = build_grid(Domain.interval(), 512)
    params = KernelParams(1, 0.5, True)
    op = assemble(g, params)
    u = solve(op, np.ones(512)).values
    ref = getoor_reference(params, g.x)
    assert np.linalg.norm(u - ref) / np.linalg.norm(ref) <= 0.05


@pytest.mark.parametrize("fixture", ["op1d", "op2d"])
def test_phi_is_energy_of_state(fixture, request, rng):
    op = request.getfixturevalue(fixture)
    for _ in range(5):
        f = rng.random(op.size)
        u = solve(op, f, tol=1e-12)
        assert phi(op, f, tol=1e-12) == pytest.approx(energy(op, u), rel=1e-10)


def test_phi_convex(op1d, rng):
    for _ in range(20):
        f1, f2 = rng.random(op1d.size), rng.random(op1d.size)
        assert phi(op1d, 0.5 * (f1 + f2)) <= 0.5 * (phi(op1d, f1) + phi(op1d, f2))


def test_inverse_positivity(op2d, rng):
    for _ in range(10):
        f = rng.random(op2d.size) * (rng.random(op2d.size) < 0.3)
        f[0] += 0.1
        u = solve(op2d, f, method="cholesky").values
        assert np.all(u > 0)


def test_poincare_ratio_bounded(op1d, rng):
    ratios = []
    for _ in range(50):
        f = rng.standard_normal(op1d.size)
        u = solve(op1d, f).values
        ratios.append(np.sqrt(op1d.grid.cellvol * u @ u) / np.sqrt(energy(op1d, u)))
    # discrete Poincare constant: ||u||^2 <= |u|_s^2 / (2 lambda_min(A))
    bound = 1 / np.sqrt(2 * np.linalg.eigvalsh(op1d.A)[0])
    assert max(ratios) <= bound * (1 + 1e-9)


def test_iteration_cap_raises(rng):
    # an ill-conditioned SPD matrix CG cannot finish within 10 * size iterations at this tolerance
    op = assemble(build_grid(Domain.interval(), 8), KernelParams(1, 0.5))
    A = np.diag(np.logspace(0, 15, 8))
    Q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    op.A = Q @ A @ Q.T
    with pytest.raises(ConvergenceError) as info:
        solve(op, rng.random(8), tol=1e-15)
    assert info.value.residual > 0


def test_invalid_arguments(op1d):
    with pytest.raises(ValueError):
        solve(op1d, np.ones(op1d.size), tol=0)
    with pytest.raises(ValueError):
        solve(op1d, np.ones(op1d.size), method="lu")
