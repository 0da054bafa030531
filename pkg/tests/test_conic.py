"""Conic core: builder, residuals, solve contract."""

import numpy as np
import pytest

from gridflex.conic import ConicProgram, Expr, Status, residuals, solve
from gridflex.errors import MissingVariable, SolveFailed


def test_bound_active_lp():
    p = ConicProgram("lp")
    x = p.add_var("x", lb=3.0)
    p.set_objective(p.var(x))
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert sol.x[x] == pytest.approx(3.0, abs=1e-7)
    assert sol.objective == pytest.approx(3.0, abs=1e-7)


def test_euclidean_norm_soc():
    p = ConicProgram("soc")
    t = p.add_var("t")
    p.add_soc(p.var(t), [Expr(const=3.0), Expr(const=4.0)])
    p.set_objective(p.var(t))
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert sol.x[t] == pytest.approx(5.0, abs=1e-6)


def test_infeasible_box():
    p = ConicProgram("empty")
    x = p.add_var("x", lb=2.0)
    p.add_le(p.var(x), 1.0, tag="cap")
    p.set_objective(p.var(x))
    sol = solve(p)
    assert sol.status is Status.INFEASIBLE
    assert "certificate" in sol.message
    with pytest.raises(SolveFailed):
        sol.require_optimal()


def test_unbounded():
    p = ConicProgram("unb")
    x = p.add_var("x", ub=1.0)
    p.set_objective(p.var(x))
    sol = solve(p)
    assert sol.status is Status.UNBOUNDED


def test_rotated_cone_geometric_mean():
    # max sqrt(u*w) with u + w = 2 -> u = w = 1; modeled as min -z, z^2 <= u*w
    p = ConicProgram("rot")
    u = p.add_var("u")
    w = p.add_var("w")
    z = p.add_var("z", lb=0.0)
    p.add_eq(p.var(u) + p.var(w), 2.0, tag="budget")
    p.add_rotated_cone(p.var(u), p.var(w), [p.var(z)], tag="gm")
    p.set_objective(-1.0 * p.var(z))
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert sol.x[z] == pytest.approx(1.0, abs=1e-6)
    assert sol.x[u] == pytest.approx(1.0, abs=1e-5)


def test_residuals_feasible_point():
    p = ConicProgram()
    x = p.add_var("x", lb=0.0, ub=2.0)
    y = p.add_var("y", lb=0.0, ub=2.0)
    p.add_eq(p.var(x) + p.var(y), 2.0, tag="sum")
    p.add_le(p.var(x) - p.var(y), 1.0, tag="diff")
    p.add_rotated_cone(p.var(x), p.var(y), [Expr(const=0.5)], tag="cone")
    r = residuals(p, np.array([1.0, 1.0]))
    assert r.max_violation <= 1e-12


def test_residuals_single_cone_violation():
    p = ConicProgram()
    t = p.add_var("t")
    p.add_soc(p.var(t), [Expr(const=1.0)], tag="norm")
    r = residuals(p, np.array([0.9]))
    assert r.cone == pytest.approx(0.1, abs=1e-12)
    assert r.linear_eq == 0.0 and r.bounds == 0.0
    assert r.worst == "soc:norm"


def test_residuals_rotated_product_gap():
    p = ConicProgram()
    u = p.add_var("u")
    w = p.add_var("w")
    p.add_rotated_cone(p.var(u), p.var(w), [Expr(const=1.0)], tag="rc")
    # u*w = 0.9 < 1 = ||z||^2, gap 0.1
    r = residuals(p, np.array([0.9, 1.0]))
    assert r.cone == pytest.approx(0.1, abs=1e-12)


def test_residuals_missing_variable():
    p = ConicProgram()
    p.add_var("x")
    p.add_var("y")
    with pytest.raises(MissingVariable):
        residuals(p, np.array([1.0]))


def test_determinism_bitwise():
    p = ConicProgram()
    x = p.add_var("x", lb=0.0)
    y = p.add_var("y", lb=0.0)
    p.add_eq(p.var(x) + 2.0 * p.var(y), 4.0)
    p.add_soc(Expr(const=3.0), [p.var(x), p.var(y)])
    p.set_objective(-1.0 * p.var(x) - p.var(y))
    a = solve(p)
    b = solve(p)
    assert a.status == b.status
    assert a.objective == b.objective
    assert np.array_equal(a.x, b.x)


def test_objective_scaling_invariance():
    def build(k):
        p = ConicProgram()
        x = p.add_var("x", lb=0.0)
        y = p.add_var("y", lb=0.0)
        p.add_eq(p.var(x) + p.var(y), 1.0)
        p.set_objective(k * (2.0 * p.var(x) + p.var(y)))
        return p

    s1 = solve(build(1.0))
    s2 = solve(build(1000.0))
    assert np.allclose(s1.x, s2.x, atol=1e-5)
    assert s2.objective == pytest.approx(1000.0 * s1.objective, rel=1e-6)


def test_weak_duality():
    p = ConicProgram()
    x = p.add_var("x", lb=0.0)
    p.add_ge(p.var(x), 2.0, tag="floor")
    p.set_objective(3.0 * p.var(x))
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert sol.objective >= sol.objective_dual - 1e-6


def test_dump_lists_everything():
    p = ConicProgram("demo")
    x = p.add_var("x", lb=0.0, ub=1.0)
    t = p.add_var("t")
    p.add_eq(p.var(x), 0.5, tag="pin")
    p.add_soc(p.var(t), [p.var(x)], tag="norm")
    p.set_objective(p.var(t))
    text = p.dump()
    assert "var x0 x in [0, 1]" in text
    assert "# pin" in text
    assert "soc" in text


def test_expr_algebra():
    e = Expr({0: 1.0}) + 2.0 * Expr({1: 1.0}) - 0.5
    e = 3.0 * e
    assert e.coeffs == {0: 3.0, 1: 6.0}
    assert e.const == pytest.approx(-1.5)
    assert e.value(np.array([1.0, 1.0])) == pytest.approx(7.5)


def test_tag_counting_helpers():
    p = ConicProgram()
    x = p.add_var("soc[0]")
    p.add_var("soc[1]")
    p.add_eq(p.var(x), 1.0, tag="soc_chain[0]")
    assert p.vars_named("soc[") == 2
    assert p.rows_tagged("soc_chain") == 1
