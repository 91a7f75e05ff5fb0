"""Load-flow oracle: convergence, residual bookkeeping, the capacitive
no-load rise, terminal currents, and operating-limit checks."""

import numpy as np
import pytest

from radialopf import (
    LoadFlowError,
    check_operational,
    load_grid,
    prescribed_current_state,
    solve_loadflow,
    terminal_currents,
)
from radialopf.loadflow import residuals

from test_network import y_grid


def test_converges_at_nominal_corner(threebus):
    s = threebus.p_min + 1j * threebus.q_min
    lf = solve_loadflow(threebus, s)
    assert lf.residual <= 1e-10
    assert lf.iterations < 50
    assert np.all(lf.v > 0)
    # residual recomputed outside matches the reported one
    again = residuals(threebus, s, lf.S_top, lf.S_bot, lf.v, lf.f)
    assert again == pytest.approx(lf.residual, abs=1e-14)


def test_no_load_capacitive_rise(threebus):
    """With zero injections the shunts alone push every voltage at or
    above the slack value and still drive a small circulating current."""
    lf = solve_loadflow(threebus, np.zeros(3, dtype=complex))
    assert np.all(lf.v >= threebus.v0 - 1e-12)
    assert np.all(lf.f > 0)
    assert lf.v[2] > lf.v[0]  # rise accumulates toward the feeder end


def test_no_load_no_shunt_is_flat(threebus):
    g0 = threebus.with_zero_shunt()
    lf = solve_loadflow(g0, np.zeros(3, dtype=complex))
    assert np.allclose(lf.v, g0.v0, atol=1e-12)
    assert np.allclose(lf.f, 0.0, atol=1e-14)
    assert np.allclose(lf.S_top, 0.0, atol=1e-12)


def test_v_up_indexing(threebus):
    lf = solve_loadflow(threebus, np.zeros(3, dtype=complex))
    v_up = lf.v_up(threebus)
    assert v_up[0] == threebus.v0
    assert v_up[1] == lf.v[0] and v_up[2] == lf.v[1]


def test_input_shape_check(threebus):
    with pytest.raises(ValueError, match="expected 3"):
        solve_loadflow(threebus, np.zeros(4, dtype=complex))


def test_voltage_collapse(threebus):
    with pytest.raises(LoadFlowError, match="collapse|diverging|convergence"):
        solve_loadflow(threebus, np.full(3, 30.0 + 0j))


def test_iteration_budget(threebus):
    s = threebus.p_min + 1j * threebus.q_min
    with pytest.raises(LoadFlowError, match="no convergence"):
        solve_loadflow(threebus, s, max_iter=1)


def test_residuals_flag_perturbed_state(threebus):
    s = threebus.p_min + 1j * threebus.q_min
    lf = solve_loadflow(threebus, s)
    v_bad = lf.v.copy()
    v_bad[0] += 1e-3
    assert residuals(threebus, s, lf.S_top, lf.S_bot, v_bad, lf.f) > 1e-4


def test_terminal_currents_definition(threebus):
    s = threebus.p_min + 1j * threebus.q_min
    lf = solve_loadflow(threebus, s)
    top, bot = terminal_currents(threebus, lf)
    v_up = lf.v_up(threebus)
    assert np.allclose(top, np.abs(lf.S_top) ** 2 / v_up)
    assert np.allclose(bot, np.abs(lf.S_bot) ** 2 / lf.v)
    # both match the central current corrected by the shunt offsets
    f_from_top = np.abs(lf.S_top + 1j * v_up * threebus.b) ** 2 / v_up
    assert np.allclose(f_from_top, lf.f, atol=1e-9)


def test_check_operational_clean_and_flagged(threebus):
    lf = solve_loadflow(threebus, np.zeros(3, dtype=complex))
    assert check_operational(threebus, lf) == []
    # heavy export along the whole feeder overloads line 1
    s = np.full(3, -0.45 + 0j)
    lf2 = solve_loadflow(threebus, s)
    out = check_operational(threebus, lf2)
    kinds = {kind for kind, _, _ in out}
    assert kinds & {"ampacity_top", "ampacity_bottom"}
    for _, idx, excess in out:
        assert 1 <= idx <= 3 and excess > 0


def test_check_operational_voltage_band():
    g = y_grid(3)
    g.v_min = 1.02  # nothing can satisfy this floor under load
    lf = solve_loadflow(g, np.full(3, 0.08 + 0.02j))
    out = check_operational(g, lf)
    assert any(kind == "v_min" for kind, _, _ in out)


# ---- sweep with frozen currents ----------------------------------------------


def test_prescribed_currents_reproduce_loadflow(threebus):
    s = threebus.p_min + 1j * threebus.q_min
    lf = solve_loadflow(threebus, s, tol=1e-13)
    st = prescribed_current_state(threebus, s, lf.f)
    assert np.max(np.abs(st.v - lf.v)) <= 1e-9
    assert np.max(np.abs(st.S_top - lf.S_top)) <= 1e-9
    assert st.residual <= 1e-12


def test_prescribed_currents_with_slack(threebus):
    """Inflating f yields a state satisfying the linear families exactly
    while the current-definition defect equals the injected slack."""
    s = threebus.p_min + 1j * threebus.q_min
    lf = solve_loadflow(threebus, s, tol=1e-13)
    f = lf.f.copy()
    f[2] += 0.05
    st = prescribed_current_state(threebus, s, f)
    assert st.residual <= 1e-12
    v_up = st.v_up(threebus)
    gap = f - np.abs(st.S_top + 1j * v_up * threebus.b) ** 2 / v_up
    assert gap[2] > 0.025            # most of the slack survives
    assert np.all(gap >= -1e-9)      # and none goes negative
    # losses rise with the inflated current, so the import grows
    assert st.S_top[0].real > lf.S_top[0].real


def test_prescribed_currents_shape_check(threebus):
    with pytest.raises(ValueError, match="expected 3"):
        prescribed_current_state(threebus, np.zeros(3, dtype=complex),
                                 np.zeros(2))
