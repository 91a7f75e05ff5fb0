"""Certificate conditions: entrywise ratio semantics, frozen values on
the bundled feeders, scaling behavior, determinism."""

import math

import numpy as np
import pytest

from radialopf import build_matrices, check_all, ratio_condition
from radialopf.conditions import ETA_LIMIT, NORM_LIMIT

from test_network import y_grid


# ---- ratio primitive -------------------------------------------------------


def test_ratio_plain_cases():
    assert ratio_condition(np.zeros((2, 2)), np.ones((2, 2))) == 0.0
    assert ratio_condition(np.ones((2, 2)), np.ones((2, 2))) == 1.0
    assert ratio_condition(np.array([[0.25]]), np.array([[0.5]])) == 0.5


def test_ratio_infeasible_support():
    # nonzero lhs over structurally zero rhs has no finite eta
    lhs = np.array([[0.0, 1.0]])
    rhs = np.array([[1.0, 0.0]])
    assert ratio_condition(lhs, rhs) == math.inf


def test_ratio_structural_zero_tolerance():
    # entries below 1e-12 of the rhs peak count as zero on both sides
    lhs = np.array([[0.5, 1e-13]])
    rhs = np.array([[1.0, 0.0]])
    assert ratio_condition(lhs, rhs) == 0.5
    # and tiny rhs entries do not blow the ratio up
    rhs2 = np.array([[1.0, 1e-13]])
    assert ratio_condition(lhs, rhs2) == 0.5


def test_ratio_negative_lhs_ignored():
    assert ratio_condition(np.array([[-3.0]]), np.array([[1.0]])) == 0.0


def test_ratio_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        ratio_condition(np.zeros(2), np.zeros(3))


def test_ratio_all_zero_rhs():
    assert ratio_condition(np.zeros((2, 2)), np.zeros((2, 2))) == 0.0


# ---- frozen values on the bundled feeders ------------------------------------


def test_threebus_report(threebus):
    rep = check_all(threebus)
    assert rep.c1_norm == pytest.approx(0.0343032912, abs=1e-9)
    assert rep.c2_norm == pytest.approx(0.2450227824, abs=1e-9)
    assert rep.eta1 == pytest.approx(0.2550685205, abs=1e-9)
    assert rep.eta2 == pytest.approx(0.2104268530, abs=1e-9)
    assert rep.eta5 == pytest.approx(0.1921061387, abs=1e-9)
    assert rep.eta == rep.eta1
    assert rep.holds and rep.failed() == []


def test_ieee34_report(ieee34):
    rep = check_all(ieee34)
    assert rep.holds
    assert rep.eta == pytest.approx(0.2455043946, abs=1e-8)
    assert rep.c2_norm == pytest.approx(0.3783830366, abs=1e-8)


def test_cigre_report(cigre):
    rep = check_all(cigre)
    assert rep.holds
    assert rep.eta == pytest.approx(0.1386210056, abs=1e-8)
    assert rep.c2_norm == pytest.approx(0.1288511889, abs=1e-8)


def test_determinism(ieee34):
    a = check_all(ieee34)
    b = check_all(ieee34)
    for field in ("c1_norm", "c2_norm", "eta1", "eta2", "eta5"):
        assert getattr(a, field) == getattr(b, field)  # bit identical


# ---- behavior under parameter scaling ----------------------------------------


def test_c1_scales_quadratically(threebus):
    """M collects one factor k from x and one from b, H is topological,
    so the C1 norm scales exactly with k^2."""
    base = check_all(threebus).c1_norm
    for k in (2.0, 4.0):
        scaled = check_all(threebus.scaled(k)).c1_norm
        assert scaled == pytest.approx(k * k * base, rel=1e-12)


def test_conditions_degrade_with_length(threebus):
    reps = [check_all(threebus.scaled(k)) for k in (1.0, 2.0, 4.0)]
    for a, b in zip(reps, reps[1:]):
        assert b.c1_norm > a.c1_norm
        assert b.c2_norm > a.c2_norm
        assert b.eta > a.eta
    assert reps[0].holds
    assert reps[1].failed() == ["C3", "C4", "C5"]
    assert reps[2].failed() == ["C2", "C3", "C4", "C5"]


def test_zero_shunt_kills_c1(threebus):
    rep = check_all(threebus.with_zero_shunt())
    assert rep.c1_norm == 0.0  # M vanishes with b
    assert rep.holds


# ---- report mechanics --------------------------------------------------------


def test_eta_is_max_of_ratios(threebus):
    rep = check_all(threebus)
    assert rep.eta == max(rep.eta1, rep.eta2, rep.eta5)


def test_failed_names_and_limits():
    from radialopf.conditions import ConditionReport

    rep = ConditionReport(c1_norm=1.5, c2_norm=0.2, eta5=0.6, eta1=0.1,
                          eta2=0.5)
    assert rep.failed() == ["C1", "C3", "C5"]
    assert not rep.holds
    # boundary values fail: the inequalities are strict
    edge = ConditionReport(c1_norm=NORM_LIMIT, c2_norm=0.0, eta5=ETA_LIMIT,
                           eta1=0.0, eta2=0.0)
    assert edge.failed() == ["C1", "C3"]


def test_summary_text(threebus):
    rep = check_all(threebus)
    text = rep.summary()
    assert "all conditions hold" in text
    for name in ("C1", "C2", "C3", "C4", "C5"):
        assert name in text
    bad = check_all(threebus.scaled(3.0))
    assert "violated:" in bad.summary()


def test_check_all_accepts_prebuilt_matrices(threebus):
    m = build_matrices(threebus)
    a = check_all(threebus)
    b = check_all(threebus, mat=m)
    assert a.c2_norm == b.c2_norm and a.eta5 == b.eta5


def test_check_all_rule_passthrough(threebus):
    a = check_all(threebus, rule="pct110")
    b = check_all(threebus, rule="loadflow")
    assert a.holds and b.holds
    # c1 ignores the bounds entirely; the eta ratios react to them
    assert a.c1_norm == b.c1_norm
    assert a.c2_norm != b.c2_norm


def test_star_grid_holds():
    rep = check_all(y_grid(5))
    assert rep.holds and rep.eta < 0.5
