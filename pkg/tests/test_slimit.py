import itertools
import json
import math

import numpy as np
import pytest

from fracrearr.dirichlet import solve
from fracrearr.grid import Domain, build_grid
from fracrearr.kernel import KernelParams
from fracrearr.operator import assemble, energy
from fracrearr.rearrangement import FWOptions, RearrangementClass, intermediate_measure, solve_frank_wolfe
from fracrearr.slimit import (assemble_local, gradient_energy, probe_profiles, s_sweep,
                              solve_local_rearrangement)


def test_local_stencil_1d():
    g = build_grid(Domain.interval(), 8)
    A = assemble_local(g).A * g.h ** 2
    np.testing.assert_array_equal(A[3, 2:5], [-1, 2, -1])
    assert A[3, 0] == A[3, 7] == 0
    # face Dirichlet value: ghost -u at the boundary cell
    np.testing.assert_array_equal(A[0, :2], [3, -1])


@pytest.mark.parametrize("domain,N", [(Domain.interval(), 20), (Domain.rectangle(0, 2, 0, 1), 10),
                                      (Domain.disk(), 12)])
def test_local_m_matrix(domain, N):
    op = assemble_local(build_grid(domain, N))
    A = op.A
    assert np.array_equal(A, A.T)
    assert np.all(A - np.diag(np.diag(A)) <= 0)
    atol = 1e-13 * np.abs(A).max()
    np.testing.assert_allclose(A.sum(axis=1), op.tail, rtol=1e-12, atol=atol)
    assert np.all(A.sum(axis=1) >= -atol)
    assert np.linalg.eigvalsh(A)[0] > 0


def test_local_torsion_second_order():
    errs = []
    for N in (32, 64, 128):
        g = build_grid(Domain.interval(), N)
        u = solve(assemble_local(g), np.ones(N), tol=1e-14).values
        errs.append(np.abs(u - (1 - g.x ** 2) / 2).max())
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.2)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.2)


def test_local_2d_manufactured_second_order():
    errs = []
    for N in (8, 16, 32):
        g = build_grid(Domain.rectangle(0, 1, 0, 1), N)
        x, y = g.nodes.T
        exact = np.sin(np.pi * x) * np.sin(np.pi * y)
        u = solve(assemble_local(g), 2 * np.pi ** 2 * exact, tol=1e-13).values
        errs.append(np.abs(u - exact).max())
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.2)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.2)


def test_normalized_energy_tends_to_twice_dirichlet_energy():
    g = build_grid(Domain.interval(), 512)
    w = (1 - g.x ** 2) ** 2
    grad = 256 / 105  # integral of w'^2 over (-1, 1)
    assert gradient_energy(g, w) == pytest.approx(grad, rel=1e-4)
    ratios = [energy(assemble(g, KernelParams(1, s, True)), w) / (2 * grad) for s in (0.6, 0.8, 0.9, 0.95)]
    assert np.all(np.diff(ratios) > 0)
    assert abs(ratios[-1] - 1) <= 0.1


def test_local_rearrangement_full_budget():
    g = build_grid(Domain.interval(), 16)
    sol = solve_local_rearrangement(g, g.measure)
    np.testing.assert_array_equal(sol.f_hat.values, 1.0)


@pytest.mark.parametrize("N", [64, 256])
def test_local_density_is_indicator(N):
    g = build_grid(Domain.interval(), N)
    sol = solve_local_rearrangement(g, 1.0, FWOptions(gap_tol=1e-12))
    assert intermediate_measure(g, sol.f_hat) <= g.cellvol
    # mass near the boundary, plateau in the middle: f = 1 on |x| > 1/2
    np.testing.assert_array_equal(sol.f_hat.values, (np.abs(g.x) > 0.5).astype(float))
    assert sol.alpha == pytest.approx(0.125, rel=1e-12)


def test_local_rearrangement_brute_force_n3():
    g = build_grid(Domain.interval(), 3)
    op = assemble_local(g)
    beta = 1.0
    sol = solve_local_rearrangement(g, beta, FWOptions(gap_tol=1e-12), op=op)
    levels = np.round(np.arange(0, 1.0001, 0.05), 10)
    best = np.inf
    for f1, f2 in itertools.product(levels, levels):
        f3 = beta / g.cellvol - f1 - f2
        if 0 <= f3 <= 1:
            f = np.array([f1, f2, f3])
            best = min(best, 2 * g.cellvol * f @ np.linalg.solve(op.A, f))
    assert best >= sol.objective - sol.gap - 1e-15
    assert sol.objective == pytest.approx(best, rel=1e-3)


def test_probe_profiles():
    g = build_grid(Domain.interval(), 64)
    P = probe_profiles(g)
    assert P.shape == (5, 64)
    np.testing.assert_allclose(P, P[::-1, ::-1])
    assert probe_profiles(build_grid(Domain.disk(), 10)).shape[0] == 5


@pytest.fixture(scope="module")
def sweep128():
    return s_sweep(Domain.interval(), 128, 1.0, [0.6, 0.8, 0.9, 0.95], keep_solutions=True)


def test_sweep_trends(sweep128):
    assert sweep128.ok
    for name in ("state_dist", "objective_diff", "frac_measure"):
        assert np.all(np.diff(sweep128.column(name)) < 0), name
    assert sweep128.reference.frac_measure == 0.0
    rows = sweep128.rows
    assert [r.s for r in rows] == [0.6, 0.8, 0.9, 0.95]
    for r in rows:
        assert all(math.isfinite(v) for v in r.density_tests) and len(r.density_tests) == 5


def test_sweep_single_entry_reproduces_solver(sweep128):
    g = build_grid(Domain.interval(), 128)
    sol = solve_frank_wolfe(assemble(g, KernelParams(1, 0.8, True)), RearrangementClass.on(g, 1.0))
    single = s_sweep(Domain.interval(), 128, 1.0, [0.8], keep_solutions=True)
    np.testing.assert_array_equal(single.solutions[0.8].f_hat.values, sol.f_hat.values)
    assert single.rows[0].objective == sol.objective
    assert single.rows[0] == sweep128.rows[1]


def test_sweep_parallel_identical(sweep128):
    par = s_sweep(Domain.interval(), 128, 1.0, [0.6, 0.8, 0.9, 0.95], workers=2)
    assert par.rows == sweep128.rows


def test_sweep_row_failure_keeps_going(monkeypatch):
    from fracrearr import slimit
    from fracrearr.dirichlet import ConvergenceError

    real = slimit.solve_frank_wolfe

    def flaky(op, cls, opts=None):
        if op.params is not None and op.params.s == 0.7:
            raise ConvergenceError("synthetic failure", 1.0)
        return real(op, cls, opts)

    monkeypatch.setattr(slimit, "solve_frank_wolfe", flaky)
    table = s_sweep(Domain.interval(), 32, 1.0, [0.5, 0.7, 0.9])
    assert [r.failed for r in table.rows] == [False, True, False]
    assert "synthetic" in table.rows[1].error
    assert math.isnan(table.rows[1].state_dist)
    np.testing.assert_array_equal(table.s_values(), [0.5, 0.9])
    assert not table.ok


@pytest.mark.parametrize("kwargs,s_list", [({"normalized": False}, [0.5]), ({}, [0.5, 0.99]),
                                           ({}, [0.8, 0.6]), ({"s_cap": 0.9}, [0.95]), ({}, [])])
def test_sweep_validation(kwargs, s_list):
    with pytest.raises(ValueError):
        s_sweep(Domain.interval(), 16, 1.0, s_list, **kwargs)


def test_sweep_outputs(tmp_path, sweep128):
    sweep128.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].startswith("s,alpha_s,objective,state_dist")
    assert len(lines) == 5
    sweep128.write_json(tmp_path / "t.json")
    loaded = json.loads((tmp_path / "t.json").read_text())
    assert loaded["rows"][2]["s"] == 0.9
    assert loaded["rows"][2]["state_dist"] == sweep128.rows[2].state_dist
    assert loaded["reference"]["frac_measure"] == 0.0
    paths = sweep128.write_gnuplot(tmp_path / "plots")
    assert len(paths) == 5
    cols = np.loadtxt(paths[2])
    assert cols.shape == (4, 2)
    np.testing.assert_array_equal(cols[:, 1], sweep128.column(paths[2].stem))
