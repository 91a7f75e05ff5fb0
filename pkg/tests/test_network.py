"""Grid data model: parsing, validation, per-unit conversion, topology."""

import math

import numpy as np
import pytest

from radialopf import (
    Bus,
    GridError,
    InjectionSet,
    Line,
    ParseError,
    PerUnitBase,
    RadialGrid,
    ValidationError,
    adjacency,
    bundled_grid_names,
    closure,
    from_per_unit,
    load_grid,
    parse_grid,
    to_per_unit,
    upstream,
)

BASE = PerUnitBase(5.0, 24.9)


def small_grid_text(line2_extra: str = "") -> str:
    """Two-line chain in per-unit form; extra keys can be appended to
    the second line section."""
    return f"""
[grid]
v0 = 1.0
v_min = 0.81
v_max = 1.1025

[base]
s_base_mva = 5.0
v_base_kv = 24.9

[bus 1]
p_min = 0.0
p_max = 0.02
q_min = -0.01
q_max = 0.01

[bus 2]
p_min = -0.1
p_max = 0.05
q_min = -0.02
q_max = 0.02

[line 1]
up = 0
r = 0.01
x = 0.012
b = 0.05
i_max_sq = 1.0

[line 2]
up = 1
r = 0.02
x = 0.015
b = 0.04
i_max_sq = 1.2
{line2_extra}
"""


def y_grid(n: int = 3) -> RadialGrid:
    """Star: lines 2..n all hang off bus 1."""
    lines = [Line(id=1, up=0, r=0.01, x=0.01, b=0.02, i_max_sq=1.0)]
    for l in range(2, n + 1):
        lines.append(Line(id=l, up=1, r=0.01, x=0.01, b=0.02, i_max_sq=1.0))
    buses = [Bus(id=i, p_min=-0.1, p_max=0.1, q_min=-0.1, q_max=0.1)
             for i in range(1, n + 1)]
    return RadialGrid(base=BASE, v0=1.0, v_min=0.81, v_max=1.21,
                      buses=buses, lines=lines, name="y")


# ---- per-unit base ---------------------------------------------------------


def test_base_quantities():
    assert BASE.z_base_ohm == pytest.approx(124.002, abs=1e-9)
    expected = 5e6 / (math.sqrt(3.0) * 24.9e3)
    assert BASE.i_base_a == pytest.approx(expected, rel=1e-15)
    assert BASE.i_base_a == pytest.approx(115.93378899, abs=1e-6)
    assert BASE.f_hz == 50.0


def test_per_unit_conversion_roundtrip():
    r, x, b = to_per_unit(0.193, 0.38, 0.24, 22.0, BASE)
    assert r == pytest.approx(0.193 * 22.0 / BASE.z_base_ohm, rel=1e-15)
    omega = 2 * math.pi * 50.0
    assert x == pytest.approx(omega * 0.38e-3 * 22.0 / BASE.z_base_ohm, rel=1e-15)
    # b is one end of the pi model, half the total charging
    assert b == pytest.approx(0.5 * omega * 0.24e-6 * 22.0 * BASE.z_base_ohm,
                              rel=1e-15)
    back = from_per_unit(r, x, b, 22.0, BASE)
    assert back == pytest.approx((0.193, 0.38, 0.24), rel=1e-12)


def test_per_unit_rejects_nonpositive_length():
    with pytest.raises(ValidationError, match="length"):
        to_per_unit(0.1, 0.3, 0.2, 0.0, BASE)
    with pytest.raises(ValidationError, match="length"):
        from_per_unit(0.01, 0.01, 0.05, -1.0, BASE)


# ---- bundled data ----------------------------------------------------------


def test_bundled_names():
    assert bundled_grid_names() == ["cigre_mv", "ieee34", "threebus"]


def test_load_threebus(threebus):
    g = threebus
    assert g.n_lines == 3
    assert list(g.up) == [0, 1, 2]
    assert g.base.s_base_mva == 5.0 and g.base.v_base_kv == 24.9
    # raw cable data converted on parse; frozen hand values
    assert g.lines[0].r == pytest.approx(0.034241383203, abs=1e-10)
    assert g.lines[0].x == pytest.approx(0.021180073373, abs=1e-10)
    assert g.lines[0].b == pytest.approx(0.102844835869, abs=1e-10)
    assert g.lines[0].i_max_sq == pytest.approx((120.0 / g.base.i_base_a) ** 2,
                                                rel=1e-12)
    assert all(ln.length_km == 22.0 for ln in g.lines)
    # fixed injections at buses 1 and 2, dispatchable at 3
    assert g.buses[0].p_min == g.buses[0].p_max == -0.21
    assert g.buses[2].p_min == -0.3 and g.buses[2].p_max == 0.3


def test_load_grid_by_path_and_missing(tmp_path):
    p = tmp_path / "two.grid"
    p.write_text(small_grid_text())
    g = load_grid(str(p))
    assert g.n_lines == 2 and g.name == str(p)
    with pytest.raises(GridError, match="cannot open"):
        load_grid(str(tmp_path / "nope.grid"))


def test_ieee34_and_cigre_shapes(ieee34, cigre):
    assert ieee34.n_lines == 33
    assert cigre.n_lines == 10
    for g in (ieee34, cigre):
        assert np.all(g.b > 0)
        assert np.all(g.i_max_sq > 0)
        g.validate()


# ---- parsing ---------------------------------------------------------------


def test_parse_per_unit_lines():
    g = parse_grid(small_grid_text(), name="two")
    assert g.n_lines == 2
    assert g.lines[1].r == 0.02 and g.lines[1].up == 1
    assert g.lines[0].length_km == 0.0  # no raw data, length unknown
    assert g.v_max == 1.1025


def test_parse_injection_sets():
    txt = small_grid_text().replace(
        "[bus 2]\np_min = -0.1",
        "[bus 2]\ninjection_set = fixed_power_factor 0.95\np_min = -0.1")
    g = parse_grid(txt.replace("p_max = 0.05", "p_max = -0.02"))
    iset = g.buses[1].injection_set
    assert iset.kind == "fixed_power_factor"
    assert iset.rho == 0.95 and not iset.lead
    assert iset.kappa == pytest.approx(math.sqrt(1 - 0.95 ** 2))


def test_parse_errors():
    with pytest.raises(ParseError, match="before any section"):
        parse_grid("v0 = 1.0\n")
    with pytest.raises(ParseError, match="duplicate section"):
        parse_grid(small_grid_text() + "\n[grid]\nv0 = 1.0\n")
    with pytest.raises(ParseError, match="missing section"):
        parse_grid("[grid]\nv0 = 1\nv_min = 0.8\nv_max = 1.2\n")
    with pytest.raises(ParseError, match="bad numeric value"):
        parse_grid(small_grid_text().replace("r = 0.01", "r = abc"))
    with pytest.raises(ParseError, match="expected key = value"):
        parse_grid(small_grid_text().replace("r = 0.01", "r 0.01"))
    with pytest.raises(ParseError, match="missing field i_max_sq"):
        parse_grid(small_grid_text().replace("i_max_sq = 1.0\n", ""))
    with pytest.raises(ParseError, match="numbered 1..L"):
        parse_grid(small_grid_text().replace("[bus 2]", "[bus 3]"))
    with pytest.raises(ParseError, match="per-unit fields absent"):
        parse_grid(small_grid_text().replace("up = 1\nr = 0.02", "up = 1"))


def test_parse_comments_and_inline_raw(tmp_path):
    txt = """
# header comment
[grid]
v0 = 1.0   # slack
v_min = 0.81
v_max = 1.21
[base]
s_base_mva = 5.0
v_base_kv = 24.9
f_hz = 60.0
[raw]
r_ohm_per_km = 0.2
l_mh_per_km = 0.4
c_uf_per_km = 0.25
i_max_a = 150.0
[bus 1]
p_min = -0.1
p_max = 0.1
q_min = -0.1
q_max = 0.1
[line 1]
up = 0
length_km = 5.0
r_ohm_per_km = 0.3   # overrides the default
"""
    g = parse_grid(txt)
    assert g.base.f_hz == 60.0
    r, x, b = to_per_unit(0.3, 0.4, 0.25, 5.0, g.base)
    assert g.lines[0].r == pytest.approx(r, rel=1e-15)
    assert g.lines[0].x == pytest.approx(x, rel=1e-15)
    assert g.lines[0].b == pytest.approx(b, rel=1e-15)
    assert g.lines[0].length_km == 5.0
    assert g.lines[0].i_max_sq == pytest.approx((150.0 / g.base.i_base_a) ** 2)


# ---- validation ------------------------------------------------------------


def test_validate_topology_errors():
    g = y_grid()
    g.lines[2] = Line(id=3, up=0, r=0.01, x=0.01, b=0.02, i_max_sq=1.0)
    with pytest.raises(ValidationError, match="only line 1"):
        g.validate()
    g = y_grid()
    g.lines[1] = Line(id=2, up=2, r=0.01, x=0.01, b=0.02, i_max_sq=1.0)
    with pytest.raises(ValidationError, match="parent bus must satisfy"):
        g.validate()
    g = y_grid()
    g.lines[0] = Line(id=1, up=1, r=0.01, x=0.01, b=0.02, i_max_sq=1.0)
    with pytest.raises(ValidationError):
        g.validate()  # no root at all


def test_validate_parameter_errors():
    g = y_grid()
    g.lines[1] = Line(id=2, up=1, r=-0.01, x=0.01, b=0.02, i_max_sq=1.0)
    with pytest.raises(ValidationError, match="r and x must be positive"):
        g.validate()
    g = y_grid()
    g.lines[1] = Line(id=2, up=1, r=0.01, x=0.01, b=0.02, i_max_sq=0.0)
    with pytest.raises(ValidationError, match="i_max_sq"):
        g.validate()
    g = y_grid()
    g.buses[1] = Bus(id=2, p_min=0.2, p_max=0.1, q_min=0.0, q_max=0.0)
    with pytest.raises(ValidationError, match="empty injection box"):
        g.validate()
    g = y_grid()
    g.v_min, g.v_max = 1.21, 0.81
    with pytest.raises(ValidationError, match="v_min < v_max"):
        g.validate()


def test_zero_shunt_gate():
    g = y_grid()
    g.lines[1] = Line(id=2, up=1, r=0.01, x=0.01, b=0.0, i_max_sq=1.0)
    with pytest.raises(ValidationError, match="allow_zero_shunt"):
        g.validate()
    g.validate(allow_zero_shunt=True)  # explicit opt-in passes


def test_power_factor_needs_sign_definite_range():
    g = y_grid()
    g.buses[1] = Bus(id=2, p_min=-0.1, p_max=0.1, q_min=0.0, q_max=0.0,
                     injection_set=InjectionSet("fixed_power_factor", 0.9))
    with pytest.raises(ValidationError, match="sign-definite"):
        g.validate()
    with pytest.raises(ValidationError, match="power factor"):
        InjectionSet("min_power_factor", 1.5)
    with pytest.raises(ValidationError, match="unknown injection set"):
        InjectionSet("diamond")


# ---- copies and scaling ----------------------------------------------------


def test_scaled_copies_do_not_alias(threebus):
    g2 = threebus.scaled(2.0)
    assert g2.lines[0].r == pytest.approx(2 * threebus.lines[0].r)
    assert g2.lines[0].x == pytest.approx(2 * threebus.lines[0].x)
    assert g2.lines[0].b == pytest.approx(2 * threebus.lines[0].b)
    assert g2.lines[0].i_max_sq == threebus.lines[0].i_max_sq
    g2.lines[0].r = 99.0
    assert threebus.lines[0].r < 1.0  # original untouched


def test_with_zero_shunt(threebus):
    g0 = threebus.with_zero_shunt()
    assert np.all(g0.b == 0.0)
    assert np.all(threebus.b > 0.0)
    assert g0.name.endswith("+noshunt")
    g0.validate(allow_zero_shunt=True)


# ---- topology helpers ------------------------------------------------------


def test_adjacency_and_closure_chain():
    g = parse_grid(small_grid_text())
    G = adjacency(g)
    assert G.tolist() == [[0.0, 1.0], [0.0, 0.0]]
    H = closure(g)
    assert H.tolist() == [[1.0, 1.0], [0.0, 1.0]]


def test_adjacency_and_closure_star():
    g = y_grid(4)
    G = adjacency(g)
    # lines 2, 3, 4 all hang off bus 1
    assert G[0].tolist() == [0.0, 1.0, 1.0, 1.0]
    assert np.all(G[1:] == 0.0)
    H = closure(g)
    assert np.allclose(H, np.eye(4) + G)
    # H equals the geometric series of G, here it terminates at one step
    assert np.allclose(H @ (np.eye(4) - G), np.eye(4))


def test_upstream_values():
    g = y_grid(3)
    vals = np.array([10.0, 20.0, 30.0])
    out = upstream(g, vals, slack=-1.0)
    assert out.tolist() == [-1.0, 10.0, 10.0]


def test_children_lists():
    g = y_grid(3)
    assert g.children() == [[1, 2], [], []]
    assert g.v_up_const().tolist() == [True, False, False]
