"""Radial grid model: per-unit data, tree topology, and the grid file format.

A network is a rooted tree of L lines and L buses. Bus indices run 1..L,
line l ends at bus l, and up(l) is the index of the bus at the other
(slack-facing) end of line l. Exactly one line is attached to the slack
bus, so up(1) = 0 and every other line has 1 <= up(l) < l. The slack
voltage magnitude is fixed; all per-line quantities are in per unit on a
common three-phase base.

Each line is a pi model: series impedance r + jx and one shunt
susceptance b at each end (total line charging 2b).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

__all__ = [
    "GridError",
    "ParseError",
    "ValidationError",
    "PerUnitBase",
    "InjectionSet",
    "Bus",
    "Line",
    "RadialGrid",
    "to_per_unit",
    "from_per_unit",
    "adjacency",
    "closure",
    "upstream",
    "parse_grid",
    "load_grid",
    "bundled_grid_names",
]


class GridError(Exception):
    """Base error for grid data problems."""


class ParseError(GridError):
    """Raised when a grid file cannot be parsed."""


class ValidationError(GridError):
    """Raised when parsed grid data violates a model invariant."""


@dataclass(frozen=True)
class PerUnitBase:
    """Three-phase per-unit base: apparent power (MVA), line-to-line
    voltage (kV) and system frequency (Hz)."""

    s_base_mva: float
    v_base_kv: float
    f_hz: float = 50.0

    @property
    def z_base_ohm(self) -> float:
        return (self.v_base_kv * 1e3) ** 2 / (self.s_base_mva * 1e6)

    @property
    def i_base_a(self) -> float:
        # three-phase base current, in amperes
        return self.s_base_mva * 1e6 / (math.sqrt(3.0) * self.v_base_kv * 1e3)


def to_per_unit(r_ohm_per_km, l_mh_per_km, c_uf_per_km, length_km, base: PerUnitBase):
    """Convert raw cable data to per-unit line parameters (r, x, b).

    b is the shunt susceptance of ONE end of the pi model, i.e. half of
    the total line charging susceptance omega*C*length.
    """
    if length_km <= 0:
        raise ValidationError("line length must be positive")
    z_base = base.z_base_ohm
    omega = 2.0 * math.pi * base.f_hz
    r = r_ohm_per_km * length_km / z_base
    x = omega * l_mh_per_km * 1e-3 * length_km / z_base
    b = 0.5 * omega * c_uf_per_km * 1e-6 * length_km * z_base
    return r, x, b


def from_per_unit(r, x, b, length_km, base: PerUnitBase):
    """Inverse of :func:`to_per_unit`; returns (R ohm/km, L mH/km, C uF/km)."""
    if length_km <= 0:
        raise ValidationError("line length must be positive")
    z_base = base.z_base_ohm
    omega = 2.0 * math.pi * base.f_hz
    r_ohm_per_km = r * z_base / length_km
    l_mh_per_km = x * z_base / (omega * length_km) * 1e3
    c_uf_per_km = 2.0 * b / (omega * z_base * length_km) * 1e6
    return r_ohm_per_km, l_mh_per_km, c_uf_per_km


@dataclass(frozen=True)
class InjectionSet:
    """Feasible set of one bus injection besides the box bounds.

    kind is one of "box", "fixed_power_factor", "min_power_factor". For
    the power-factor kinds, rho is the power factor in (0, 1] and the
    reactive component is tied to the active one through
    kappa = sqrt(1 - rho^2). Power-factor sets require the active range
    of the bus to be sign definite (p_max <= 0 or p_min >= 0), otherwise
    the resulting set is not convex.
    """

    kind: str = "box"
    rho: float = 1.0
    lead: bool = False

    def __post_init__(self):
        if self.kind not in ("box", "fixed_power_factor", "min_power_factor"):
            raise ValidationError(f"unknown injection set kind {self.kind!r}")
        if self.kind != "box" and not (0.0 < self.rho <= 1.0):
            raise ValidationError("power factor must be in (0, 1]")

    @property
    def kappa(self) -> float:
        return math.sqrt(max(0.0, 1.0 - self.rho * self.rho))


@dataclass
class Bus:
    """One load/generation bus. Positive p is consumption, negative p is
    injection. Bounds are per unit on the system base."""

    id: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    injection_set: InjectionSet = field(default_factory=InjectionSet)


@dataclass
class Line:
    """One pi-model line. i_max_sq is the squared ampacity in per unit
    (squared current magnitude limit for both terminal currents).
    length_km is informational (kept from raw-format input, 0 when the
    file was already in per-unit form); no computation depends on it."""

    id: int
    up: int
    r: float
    x: float
    b: float
    i_max_sq: float
    length_km: float = 0.0


@dataclass
class RadialGrid:
    base: PerUnitBase
    v0: float
    v_min: float
    v_max: float
    buses: list[Bus]
    lines: list[Line]
    name: str = ""

    # ---- sizes and topology helpers -------------------------------------

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def up(self) -> np.ndarray:
        """Parent bus index per line (0 means the slack bus), 1-based ids."""
        return np.array([ln.up for ln in self.lines], dtype=int)

    def children(self) -> list[list[int]]:
        """children()[l] lists the 0-based line indices whose parent bus is
        bus l+1; index -0 is unused (slack children are line 1 only)."""
        ch: list[list[int]] = [[] for _ in range(self.n_lines + 1)]
        for j, ln in enumerate(self.lines):
            ch[ln.up].append(j)
        return ch[1:]  # buses 1..L

    # ---- parameter vectors (0-based arrays over lines 1..L) -------------

    @property
    def r(self) -> np.ndarray:
        return np.array([ln.r for ln in self.lines])

    @property
    def x(self) -> np.ndarray:
        return np.array([ln.x for ln in self.lines])

    @property
    def b(self) -> np.ndarray:
        return np.array([ln.b for ln in self.lines])

    @property
    def z(self) -> np.ndarray:
        return self.r + 1j * self.x

    @property
    def i_max_sq(self) -> np.ndarray:
        return np.array([ln.i_max_sq for ln in self.lines])

    @property
    def p_min(self) -> np.ndarray:
        return np.array([bs.p_min for bs in self.buses])

    @property
    def p_max(self) -> np.ndarray:
        return np.array([bs.p_max for bs in self.buses])

    @property
    def q_min(self) -> np.ndarray:
        return np.array([bs.q_min for bs in self.buses])

    @property
    def q_max(self) -> np.ndarray:
        return np.array([bs.q_max for bs in self.buses])

    def v_up_const(self) -> np.ndarray:
        """Boolean mask of lines whose upstream bus is the slack."""
        return self.up == 0

    def with_zero_shunt(self) -> "RadialGrid":
        """Copy of the grid with every shunt susceptance forced to zero."""
        lines = [replace(ln, b=0.0) for ln in self.lines]
        return replace(self, lines=lines, name=self.name + "+noshunt")

    def scaled(self, k: float) -> "RadialGrid":
        """Copy with r, x and b of every line multiplied by k, as if all
        line lengths were scaled by k."""
        lines = [replace(ln, r=ln.r * k, x=ln.x * k, b=ln.b * k) for ln in self.lines]
        return replace(self, lines=lines)

    def validate(self, allow_zero_shunt: bool = False) -> None:
        L = self.n_lines
        if L == 0:
            raise ValidationError("grid has no lines")
        if len(self.buses) != L:
            raise ValidationError("bus count must equal line count")
        for i, bs in enumerate(self.buses):
            if bs.id != i + 1:
                raise ValidationError(f"bus ids must be 1..{L} in order, got {bs.id}")
            if bs.p_min > bs.p_max or bs.q_min > bs.q_max:
                raise ValidationError(f"bus {bs.id}: empty injection box")
            s = bs.injection_set
            if s is not None and s.kind != "box" and bs.p_min < 0.0 < bs.p_max:
                raise ValidationError(
                    f"bus {bs.id}: power-factor set needs a sign-definite active range"
                )
        seen_root = False
        for j, ln in enumerate(self.lines):
            if ln.id != j + 1:
                raise ValidationError(f"line ids must be 1..{L} in order, got {ln.id}")
            if ln.up == 0:
                if ln.id != 1:
                    raise ValidationError("only line 1 may be attached to the slack bus")
                seen_root = True
            elif not (1 <= ln.up < ln.id):
                raise ValidationError(
                    f"line {ln.id}: parent bus must satisfy 1 <= up < id (got {ln.up})"
                )
            if ln.r <= 0 or ln.x <= 0:
                raise ValidationError(f"line {ln.id}: r and x must be positive")
            if ln.b < 0 or (ln.b == 0 and not allow_zero_shunt):
                raise ValidationError(
                    f"line {ln.id}: shunt b must be positive (pass allow_zero_shunt for b = 0)"
                )
            if ln.i_max_sq <= 0:
                raise ValidationError(f"line {ln.id}: i_max_sq must be positive")
        if not seen_root:
            raise ValidationError("no line is attached to the slack bus")
        if not (0.0 < self.v_min < self.v_max):
            raise ValidationError("need 0 < v_min < v_max (squared magnitudes)")
        if self.v0 <= 0:
            raise ValidationError("slack voltage v0 must be positive")


# ---- topology matrices ---------------------------------------------------


def adjacency(grid: RadialGrid) -> np.ndarray:
    """Downstream adjacency G: G[k, l] = 1 iff bus k+1 is the parent of
    line l+1. Strictly upper triangular by the labeling invariant."""
    L = grid.n_lines
    G = np.zeros((L, L))
    for j, ln in enumerate(grid.lines):
        if ln.up >= 1:
            G[ln.up - 1, j] = 1.0
    return G


def upstream(grid: RadialGrid, values: np.ndarray, slack: float) -> np.ndarray:
    """Per-line vector of `values` at the upstream bus; lines hanging off
    the slack bus get the constant `slack` instead."""
    up = grid.up
    out = np.full(grid.n_lines, float(slack))
    mask = up >= 1
    out[mask] = np.asarray(values, dtype=float)[up[mask] - 1]
    return out


def closure(grid: RadialGrid) -> np.ndarray:
    """Reachability closure H = (I - G)^-1 = I + G + ... + G^(L-1).

    H[k, l] = 1 iff line l+1 lies in the subtree below line k+1
    (inclusive). Computed by a dense solve; G is nilpotent so the
    inverse is exact up to rounding.
    """
    L = grid.n_lines
    G = adjacency(grid)
    H = np.linalg.solve(np.eye(L) - G, np.eye(L))
    # entries are structurally 0 or 1
    return np.round(H)


# ---- grid file format ----------------------------------------------------

_SECTION_RE = re.compile(r"^\[([a-z_]+)(?:\s+(\d+))?\]$")

_RAW_LINE_KEYS = ("r_ohm_per_km", "l_mh_per_km", "c_uf_per_km")


def _parse_value(key: str, raw: str, lineno: int):
    if key == "injection_set":
        parts = raw.split()
        kind = parts[0]
        if kind == "box":
            return InjectionSet()
        if len(parts) < 2:
            raise ParseError(f"line {lineno}: {kind} needs a power factor value")
        rho = float(parts[1])
        lead = len(parts) > 2 and parts[2] == "lead"
        return InjectionSet(kind=kind, rho=rho, lead=lead)
    try:
        return float(raw)
    except ValueError as exc:
        raise ParseError(f"line {lineno}: bad numeric value {raw!r} for {key}") from exc


def parse_grid(text: str, allow_zero_shunt: bool = False, name: str = "") -> RadialGrid:
    """Parse the line-oriented grid format.

    Sections: [grid] (v0, v_min, v_max), [base] (s_base_mva, v_base_kv,
    f_hz), one [bus i] per bus, one [line l] per line, and an optional
    [raw] section. When [raw] is present, line sections may carry raw
    cable fields (r_ohm_per_km, l_mh_per_km, c_uf_per_km, length_km,
    i_max_a) instead of per-unit r/x/b/i_max_sq; values missing from a
    line section fall back to the [raw] defaults and are converted with
    to_per_unit. '#' starts a comment.
    """
    sections: dict[tuple[str, int | None], dict] = {}
    current: dict | None = None
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m:
            key = (m.group(1), int(m.group(2)) if m.group(2) else None)
            if key in sections:
                raise ParseError(f"line {lineno}: duplicate section {line}")
            current = {}
            sections[key] = current
            continue
        if current is None:
            raise ParseError(f"line {lineno}: data before any section header")
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        current[key] = _parse_value(key, val.strip(), lineno)

    def need(section: str, idx=None) -> dict:
        try:
            return sections[(section, idx)]
        except KeyError:
            label = f"[{section} {idx}]" if idx is not None else f"[{section}]"
            raise ParseError(f"missing section {label}") from None

    base_sec = need("base")
    try:
        base = PerUnitBase(
            s_base_mva=base_sec["s_base_mva"],
            v_base_kv=base_sec["v_base_kv"],
            f_hz=base_sec.get("f_hz", 50.0),
        )
        grid_sec = need("grid")
        v0 = grid_sec["v0"]
        v_min = grid_sec["v_min"]
        v_max = grid_sec["v_max"]
    except KeyError as exc:
        raise ParseError(f"missing grid-level field {exc.args[0]}") from None

    raw_defaults = sections.get(("raw", None))

    bus_ids = sorted(i for (kind, i) in sections if kind == "bus")
    line_ids = sorted(i for (kind, i) in sections if kind == "line")
    if not line_ids:
        raise ParseError("no [line l] sections found")
    if bus_ids != list(range(1, len(bus_ids) + 1)):
        raise ParseError("bus sections must be numbered 1..L without gaps")
    if line_ids != list(range(1, len(line_ids) + 1)):
        raise ParseError("line sections must be numbered 1..L without gaps")
    if bus_ids != line_ids:
        raise ParseError("each bus i must pair with line i")

    buses = []
    for i in bus_ids:
        sec = need("bus", i)
        try:
            buses.append(
                Bus(
                    id=i,
                    p_min=sec["p_min"],
                    p_max=sec["p_max"],
                    q_min=sec["q_min"],
                    q_max=sec["q_max"],
                    injection_set=sec.get("injection_set", InjectionSet()),
                )
            )
        except KeyError as exc:
            raise ParseError(f"[bus {i}]: missing field {exc.args[0]}") from None

    lines = []
    for i in line_ids:
        sec = need("line", i)
        if "up" not in sec:
            raise ParseError(f"[line {i}]: missing field up")
        up = int(sec["up"])
        if "r" in sec:
            try:
                ln = Line(id=i, up=up, r=sec["r"], x=sec["x"], b=sec["b"],
                          i_max_sq=sec["i_max_sq"])
            except KeyError as exc:
                raise ParseError(f"[line {i}]: missing field {exc.args[0]}") from None
        else:
            if raw_defaults is None:
                raise ParseError(
                    f"[line {i}]: per-unit fields absent and no [raw] section given"
                )
            try:
                vals = [sec.get(k, raw_defaults.get(k)) for k in _RAW_LINE_KEYS]
                if any(v is None for v in vals):
                    missing = [k for k, v in zip(_RAW_LINE_KEYS, vals) if v is None]
                    raise ParseError(f"[line {i}]: missing raw field(s) {missing}")
                length = sec["length_km"]
                i_max_a = sec.get("i_max_a", raw_defaults.get("i_max_a"))
                if i_max_a is None:
                    raise ParseError(f"[line {i}]: missing field i_max_a")
            except KeyError as exc:
                raise ParseError(f"[line {i}]: missing field {exc.args[0]}") from None
            r, x, b = to_per_unit(*vals, length, base)
            ln = Line(id=i, up=up, r=r, x=x, b=b,
                      i_max_sq=(i_max_a / base.i_base_a) ** 2,
                      length_km=length)
        lines.append(ln)

    grid = RadialGrid(base=base, v0=v0, v_min=v_min, v_max=v_max,
                      buses=buses, lines=lines, name=name)
    grid.validate(allow_zero_shunt=allow_zero_shunt)
    return grid


def bundled_grid_names() -> list[str]:
    files = resources.files("radialopf").joinpath("data")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".grid"))


def load_grid(name_or_path: str, allow_zero_shunt: bool = False) -> RadialGrid:
    """Load a grid file from disk, or a bundled one by short name
    ("threebus", "ieee34", "cigre_mv")."""
    candidate = resources.files("radialopf").joinpath(f"data/{name_or_path}.grid")
    if re.fullmatch(r"[a-z0-9_]+", name_or_path) and candidate.is_file():
        text = candidate.read_text()
        label = name_or_path
    else:
        try:
            with open(name_or_path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise GridError(f"cannot open grid file {name_or_path!r}: {exc}") from exc
        label = name_or_path
    return parse_grid(text, allow_zero_shunt=allow_zero_shunt, name=label)
