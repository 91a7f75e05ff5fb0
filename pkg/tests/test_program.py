"""Conic program container: expression algebra, block bookkeeping,
solver statuses, residual reporting, serialization."""

import json

import numpy as np
import pytest

from radialopf.program import ConicProgram, LinExpr


def test_linexpr_algebra():
    a = LinExpr({0: 2.0}, 1.0)
    b = LinExpr({0: -1.0, 3: 4.0}, 0.5)
    c = a + b
    assert c.terms == {0: 1.0, 3: 4.0}
    assert c.const == 1.5
    d = 2.0 * a - b
    assert d.terms == {0: 5.0, 3: -4.0}
    assert d.const == 1.5
    e = a - 1.0
    assert e.const == 0.0
    assert (1.0 - a).terms == {0: -2.0}
    x = np.array([3.0, 0.0, 0.0, 2.0])
    assert c.value(x) == pytest.approx(3.0 + 8.0 + 1.5)
    assert LinExpr.constant(7.0).value(x) == 7.0
    # operators copy, never mutate
    assert a.terms == {0: 2.0} and a.const == 1.0


def test_duplicate_block_rejected():
    prog = ConicProgram()
    prog.add_block("x", 2)
    with pytest.raises(ValueError, match="duplicate variable block"):
        prog.add_block("x", 3)


def test_block_indexing():
    prog = ConicProgram()
    prog.add_block("pad", 3)
    blk = prog.add_block("x", 2)
    assert blk[0].terms == {3: 1.0}
    assert blk[1].terms == {4: 1.0}
    assert list(blk.indices()) == [3, 4]
    with pytest.raises(IndexError):
        blk[2]
    with pytest.raises(IndexError):
        blk[-1]


def test_lp_roundtrip():
    prog = ConicProgram()
    x = prog.add_block("x", 1)
    prog.add_le(3.0 - x[0], "floor")       # x >= 3
    prog.set_objective(x[0])
    res = prog.solve()
    assert res.ok and res.status == "optimal"
    assert res.objective == pytest.approx(3.0, abs=1e-7)
    assert x[0].value(res.x) == pytest.approx(3.0, abs=1e-7)
    assert res.eq_residual == 0.0 and res.ineq_residual <= 1e-8


def test_range_rows():
    prog = ConicProgram()
    x = prog.add_block("x", 1)
    prog.add_range(x[0], 2.5, 2.5, "pin")   # lo == hi collapses to equality
    assert len(prog.eq_rows) == 1 and not prog.le_rows
    prog.set_objective(x[0])
    res = prog.solve()
    assert res.ok
    assert x[0].value(res.x) == pytest.approx(2.5, abs=1e-7)
    with pytest.raises(ValueError, match="empty range"):
        prog.add_range(x[0], 2.0, 1.0, "bad")
    # one-sided ranges emit a single row
    prog2 = ConicProgram()
    y = prog2.add_block("y", 1)
    prog2.add_range(y[0], -np.inf, 1.0, "cap")
    assert len(prog2.le_rows) == 1


def test_rsoc_square():
    # min t  s.t.  y == 2,  y^2 <= t * 1   ->   t = 4
    prog = ConicProgram()
    y = prog.add_block("y", 1)
    t = prog.add_block("t", 1)
    prog.add_eq(y[0] - 2.0, "pin-y")
    prog.add_rsoc([y[0]], t[0], LinExpr.constant(1.0), "sq")
    prog.set_objective(t[0])
    res = prog.solve()
    assert res.ok
    assert res.objective == pytest.approx(4.0, abs=1e-6)
    assert res.cone_residual <= 1e-7


def test_infeasible_status():
    prog = ConicProgram()
    x = prog.add_block("x", 1)
    prog.add_eq(x[0] - 1.0, "a")
    prog.add_eq(x[0] - 2.0, "b")
    prog.set_objective(x[0])
    res = prog.solve()
    assert res.status == "infeasible"
    assert not res.ok
    assert res.x is None


def test_unbounded_status():
    prog = ConicProgram()
    x = prog.add_block("x", 1)
    prog.set_objective(x[0])
    res = prog.solve()
    assert res.status == "unbounded"


def test_residual_report():
    prog = ConicProgram()
    x = prog.add_block("x", 2)
    prog.add_eq(x[0] - 1.0, "eq")
    prog.add_le(x[1] - 2.0, "le")
    prog.add_rsoc([x[0]], x[1], LinExpr.constant(1.0), "cone")
    eq, ineq, cone = prog.residuals(np.array([1.0, 2.0]))
    assert eq == pytest.approx(0.0, abs=1e-15)
    assert ineq == pytest.approx(0.0, abs=1e-15)
    assert cone == pytest.approx(0.0, abs=1e-15)
    eq2, ineq2, cone2 = prog.residuals(np.array([1.5, 0.0]))
    assert eq2 == pytest.approx(0.5)
    assert ineq2 == pytest.approx(0.0, abs=1e-15)   # only positive slack counts
    assert cone2 == pytest.approx(1.5 ** 2)         # y^2 - t*u with u = 0... t = 0
    # negative cone scalars are themselves violations
    _, _, cone3 = prog.residuals(np.array([0.0, -1.0]))
    assert cone3 == pytest.approx(1.0)


def test_to_json_shape():
    prog = ConicProgram()
    x = prog.add_block("x", 2)
    prog.add_eq(x[0] - 1.0, "eq")
    prog.add_le(x[1], "le")
    prog.add_rsoc([x[0]], x[1], LinExpr.constant(1.0), "cone")
    prog.set_objective(x[0] + x[1])
    doc = json.loads(prog.to_json())
    assert doc["n_vars"] == 2
    assert doc["blocks"] == [{"name": "x", "start": 0, "size": 2}]
    assert len(doc["eq"]) == 1 and doc["eq"][0]["tag"] == "eq"
    assert len(doc["le"]) == 1
    assert len(doc["rsoc"]) == 1 and "vec" in doc["rsoc"][0]
    assert doc["minimize"]["terms"] == [[0, 1.0], [1, 1.0]]


def test_scs_backend():
    prog = ConicProgram()
    x = prog.add_block("x", 1)
    prog.add_le(3.0 - x[0], "floor")
    prog.set_objective(x[0])
    res = prog.solve(solver="scs")
    assert res.ok
    assert res.solver == "scs"
    assert res.objective == pytest.approx(3.0, abs=1e-5)


def test_unknown_solver_fallback():
    prog = ConicProgram()
    x = prog.add_block("x", 1)
    prog.add_le(3.0 - x[0], "floor")
    prog.set_objective(x[0])
    res = prog.solve(solver="nosuchsolver", fallback=False)
    assert res.status == "numerical-failure"
    assert "nosuchsolver" in res.message
    res2 = prog.solve(solver="nosuchsolver", fallback=True)
    assert res2.ok and res2.solver == "scs"
