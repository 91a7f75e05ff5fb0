"""Desk-scale experiments on the bundled feeders.

Three studies, each runnable on any grid:

- `run_threebus_comparison`: solve the augmented model, the plain
  relaxation, and the augmented model with shunts stripped, then push
  each optimum through the load-flow oracle on the true grid and
  compare terminal currents against the ampacity ratings.
- `sweep_conditions`: scale the injection floors by a factor k and
  bisect, per certificate condition, for the smallest k at which it
  fails. Reports which condition goes first and the headline numbers
  at that threshold.
- `quantify_compression`: ramp a uniform generation profile against
  the nominal demand until either the voltage majorant or the envelope
  current hits its cap, then measure how far the physical quantity
  stays below the same cap. The margin is the price of enforcing
  limits on the bounding system instead of the physical one.
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .conditions import ETA_LIMIT, NORM_LIMIT, check_all
from .loadflow import LoadFlowError, solve_loadflow, terminal_currents
from .matrices import build_matrices, vbar_linear
from .network import GridError, RadialGrid, load_grid, upstream
from .opf import (
    CostModel,
    aux_terminal_currents,
    build_ar_opf,
    build_r_opf,
    evaluate_aux,
    exactness_gap,
    solve_model,
)
from .recovery import recover

__all__ = [
    "BenchError",
    "ModelRow",
    "ComparisonResult",
    "run_threebus_comparison",
    "SweepResult",
    "sweep_conditions",
    "CompressionResult",
    "quantify_compression",
    "with_pmin_scale",
    "load_cost",
]


class BenchError(GridError):
    pass


def load_cost(name_or_path: str, n_buses: int) -> CostModel:
    """Load a cost file from disk, or a bundled one by grid short name."""
    candidate = resources.files("radialopf").joinpath(f"data/{name_or_path}.cost")
    if candidate.is_file():
        text = candidate.read_text()
    else:
        with open(name_or_path, "r", encoding="utf-8") as fh:
            text = fh.read()
    return CostModel.from_text(text, n_buses)


def with_pmin_scale(grid: RadialGrid, k: float) -> RadialGrid:
    """Copy of the grid with every injection floor p_min scaled by k.

    This stretches the generation side of the operating envelope while
    demand stays fixed, the knob the condition sweep turns.
    """
    buses = [dataclasses.replace(b, p_min=b.p_min * k) for b in grid.buses]
    return dataclasses.replace(grid, buses=buses)


def _nominal_demand(grid: RadialGrid) -> tuple[np.ndarray, np.ndarray]:
    # absorption caps read as the nominal load; generation-only buses
    # contribute zero demand
    return np.clip(grid.p_max, 0.0, None), np.clip(grid.q_max, 0.0, None)


# ---- model comparison ------------------------------------------------------


@dataclass
class ModelRow:
    """One optimum pushed through the load-flow oracle."""

    kind: str
    status: str
    objective: float
    s: np.ndarray           # complex injections at the optimum
    amp_top: np.ndarray     # oracle terminal currents, ampere
    amp_bot: np.ndarray
    limit_a: np.ndarray     # per-line rating, ampere
    max_gap: float          # relaxation slack at the optimum (aropf rows)
    solve_seconds: float

    @property
    def worst_amp(self) -> float:
        return float(np.max(np.maximum(self.amp_top, self.amp_bot)))

    @property
    def worst_ratio(self) -> float:
        """Worst terminal current over its rating; > 1 is a violation."""
        worst = np.maximum(self.amp_top, self.amp_bot) / self.limit_a
        return float(worst.max())

    @property
    def violated(self) -> bool:
        return self.worst_ratio > 1.0


@dataclass
class ComparisonResult:
    grid_name: str
    rows: list[ModelRow]

    def row(self, kind: str) -> ModelRow:
        for r in self.rows:
            if r.kind == kind:
                return r
        raise KeyError(kind)

    def to_csv(self) -> str:
        """Per line-end oracle currents of every model, ampere."""
        out = io.StringIO()
        kinds = [r.kind for r in self.rows]
        out.write("line,end,limit_a," + ",".join(kinds) + "\n")
        L = len(self.rows[0].limit_a)
        for l in range(L):
            for end in ("top", "bot"):
                amps = [r.amp_top[l] if end == "top" else r.amp_bot[l]
                        for r in self.rows]
                out.write(f"{l + 1},{end},{self.rows[0].limit_a[l]:.4f},"
                          + ",".join(f"{a:.4f}" for a in amps) + "\n")
        return out.getvalue()

    def summary(self) -> str:
        lines = [f"model comparison on {self.grid_name}"]
        for r in self.rows:
            flag = "VIOLATES" if r.violated else "within limits"
            lines.append(
                f"  {r.kind:<14} obj = {r.objective:10.4f}   worst terminal "
                f"current = {r.worst_amp:7.2f} A ({100 * r.worst_ratio:6.2f}% "
                f"of rating)  {flag}")
        return "\n".join(lines)


def _oracle_row(grid: RadialGrid, kind: str, status: str, objective: float,
                s: np.ndarray, max_gap: float, seconds: float) -> ModelRow:
    lf = solve_loadflow(grid, s)
    top, bot = terminal_currents(grid, lf)
    ia = grid.base.i_base_a
    return ModelRow(
        kind=kind, status=status, objective=objective, s=s,
        amp_top=np.sqrt(top) * ia, amp_bot=np.sqrt(bot) * ia,
        limit_a=np.sqrt(grid.i_max_sq) * ia, max_gap=max_gap,
        solve_seconds=seconds)


def run_threebus_comparison(grid: RadialGrid | None = None,
                            cost: CostModel | None = None,
                            solver: str = "clarabel") -> ComparisonResult:
    """Solve the three models and evaluate every optimum on the true grid.

    The shunt-stripped variant is solved on a zero-shunt copy, but its
    injections are still judged by the oracle of the full grid: the
    point of the exercise is what a planner would ship to the real
    feeder.
    """
    import time

    if grid is None:
        grid = load_grid("threebus")
        if cost is None:
            cost = load_cost("threebus", grid.n_lines)
    cost = cost or CostModel.import_only(grid.n_lines)
    mat = build_matrices(grid)
    rows = []

    t0 = time.perf_counter()
    sol = solve_model(build_ar_opf(grid, cost=cost), solver=solver)
    dt = time.perf_counter() - t0
    if sol.status != "optimal":
        raise BenchError(f"augmented model did not solve: {sol.status}")
    rec = recover(sol, grid, mat)
    gap = float(np.max(exactness_gap(sol, grid)))
    rows.append(_oracle_row(grid, "aropf", sol.status, sol.objective,
                            rec.s, gap, dt))

    t0 = time.perf_counter()
    sol_r = solve_model(build_r_opf(grid, cost=cost), solver=solver)
    dt = time.perf_counter() - t0
    if sol_r.status != "optimal":
        raise BenchError(f"plain relaxation did not solve: {sol_r.status}")
    s_r = sol_r.values["p"] + 1j * sol_r.values["q"]
    rows.append(_oracle_row(grid, "ropf", sol_r.status, sol_r.objective,
                            s_r, float(np.max(exactness_gap(sol_r, grid))), dt))

    g0 = grid.with_zero_shunt()
    t0 = time.perf_counter()
    sol_0 = solve_model(build_ar_opf(g0, cost=cost), solver=solver)
    dt = time.perf_counter() - t0
    if sol_0.status != "optimal":
        raise BenchError(f"zero-shunt model did not solve: {sol_0.status}")
    s_0 = sol_0.values["p"] + 1j * sol_0.values["q"]
    rows.append(_oracle_row(grid, "aropf-noshunt", sol_0.status,
                            sol_0.objective, s_0,
                            float(np.max(exactness_gap(sol_0, g0))), dt))

    return ComparisonResult(grid.name or "grid", rows)


# ---- condition sweep -------------------------------------------------------

_COND_NAMES = ("C1", "C2", "C3", "C4", "C5")


def _condition_values(grid: RadialGrid) -> dict[str, tuple[float, float]]:
    rep = check_all(grid)
    return {
        "C1": (rep.c1_norm, NORM_LIMIT),
        "C2": (rep.c2_norm, NORM_LIMIT),
        "C3": (rep.eta5, ETA_LIMIT),
        "C4": (rep.eta1, ETA_LIMIT),
        "C5": (rep.eta2, ETA_LIMIT),
    }


@dataclass
class SweepResult:
    grid_name: str
    holds_at_one: bool
    eta_at_one: float
    thresholds: dict[str, float]     # per-condition first-failure scale
    first: str                       # condition with the smallest threshold
    k_star: float
    production_mw: float             # generation at capacity, scaled
    net_mw: float                    # production minus nominal demand
    vbar_max: float                  # sqrt of the voltage majorant peak at k*
    vbar_argmax: int                 # 1-based bus of that peak

    def summary(self) -> str:
        lines = [f"condition sweep on {self.grid_name}"]
        lines.append(f"  at k = 1: holds = {self.holds_at_one}, "
                     f"eta = {self.eta_at_one:.4f}")
        for name in _COND_NAMES:
            k = self.thresholds[name]
            mark = "  <- first" if name == self.first else ""
            lines.append(f"  {name} fails at k = {k:8.4f}{mark}"
                         if np.isfinite(k) else
                         f"  {name} never fails below the scan cap{mark}")
        lines.append(f"  threshold: k* = {self.k_star:.4f}, production "
                     f"{self.production_mw:.3f} MW, net export "
                     f"{self.net_mw:.3f} MW")
        lines.append(f"  voltage majorant at k*: {self.vbar_max:.4f} pu "
                     f"at bus {self.vbar_argmax}")
        return "\n".join(lines)


def _condition_threshold(grid: RadialGrid, name: str, k_cap: float,
                         rel: float) -> float:
    """Smallest injection scale at which one condition fails."""

    def value(k: float) -> float:
        vals = _condition_values(with_pmin_scale(grid, k))
        v, lim = vals[name]
        return v - lim

    if value(1.0) >= 0.0:
        return 1.0
    lo, hi = 1.0, 2.0
    while value(hi) < 0.0:
        lo, hi = hi, hi * 2.0
        if hi > k_cap:
            return np.inf
    while hi - lo > rel * hi:
        mid = 0.5 * (lo + hi)
        if value(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sweep_conditions(grid: RadialGrid, k_cap: float = 64.0,
                     rel: float = 1e-4) -> SweepResult:
    """Find, separately for each certificate condition, the injection
    scale at which it first fails, and evaluate the feeder at the
    overall threshold.

    The operating corner for the voltage number is every unit at its
    scaled capacity against the nominal demand.
    """
    rep1 = check_all(grid)
    thresholds = {n: _condition_threshold(grid, n, k_cap, rel)
                  for n in _COND_NAMES}
    first = min(_COND_NAMES, key=lambda n: thresholds[n])
    k_star = thresholds[first]
    if not np.isfinite(k_star):
        raise BenchError(f"no condition fails below scale {k_cap}")

    sb = grid.base.s_base_mva
    share = np.abs(grid.p_min)
    load_p, load_q = _nominal_demand(grid)
    production = float(k_star * share.sum() * sb)
    net = production - float(load_p.sum() * sb)

    mat = build_matrices(grid)
    vb = vbar_linear(mat, load_p - k_star * share, load_q)
    j = int(np.argmax(vb))
    return SweepResult(
        grid_name=grid.name or "grid", holds_at_one=rep1.holds,
        eta_at_one=rep1.eta, thresholds=thresholds, first=first,
        k_star=float(k_star), production_mw=production, net_mw=net,
        vbar_max=float(np.sqrt(vb[j])), vbar_argmax=j + 1)


# ---- envelope compression --------------------------------------------------


@dataclass
class CompressionResult:
    grid_name: str
    mode: str                # "voltage" or "ampacity"
    ramp_mw: float           # uniform generation at the binding point
    bind_line: int           # 1-based binding line (ampacity) or the
                             # bus with the worst gap (voltage)
    bind_end: str            # "top" / "bot" for ampacity, "" for voltage
    bound_value: float       # the majorant side at its cap (|V| or |I|, pu)
    physical_value: float    # the oracle side at the same injections
    gap: float               # voltage: pu magnitude difference;
                             # ampacity: fraction of the rated current
                             # magnitude left unused
    converged: bool

    @property
    def gap_pct(self) -> float:
        return 100.0 * self.gap

    def summary(self) -> str:
        if self.mode == "voltage":
            return (f"voltage compression on {self.grid_name}: at "
                    f"{self.ramp_mw:.3f} MW uniform generation the majorant "
                    f"reaches its cap while the load flow sits "
                    f"{self.gap:.5f} pu lower (worst at bus {self.bind_line})")
        return (f"ampacity compression on {self.grid_name}: at "
                f"{self.ramp_mw:.3f} MW uniform generation the envelope "
                f"current on line {self.bind_line} ({self.bind_end}) reaches "
                f"its rating with {self.gap_pct:.2f}% of the rating unused "
                f"by the physical current")


def _ramp_point(grid: RadialGrid, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Uniform generation ramp against the nominal demand."""
    load_p, load_q = _nominal_demand(grid)
    return load_p - t * np.ones(grid.n_lines) / grid.n_lines, load_q


def _bisect_ramp(head, t_cap: float, rel: float) -> float:
    """Smallest uniform ramp at which `head` crosses zero."""
    if head(0.0) >= 0.0:
        raise BenchError("bound already binding with no generation")
    lo, hi = 0.0, 0.5
    while head(hi) < 0.0:
        lo, hi = hi, hi * 2.0
        if hi > t_cap:
            raise BenchError(f"bound not reached below ramp {t_cap}")
    while hi - lo > rel * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        if head(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return hi


def quantify_compression(grid: RadialGrid, mode: str = "voltage",
                         t_cap: float = 64.0,
                         rel: float = 1e-10) -> CompressionResult:
    """Measure the slack the bounding system leaves against one cap.

    voltage mode: the ampacity caps are ignored, the ramp grows until
    the voltage majorant reaches v_max, and the gap is the worst
    difference between the majorant and the oracle voltage magnitude.

    ampacity mode: the voltage band is ignored, the ramp grows until
    the envelope terminal current reaches the rating somewhere, and the
    gap is the share of that rating the physical current leaves unused.
    """
    mat = build_matrices(grid)

    if mode == "voltage":

        def head(t: float) -> float:
            p, q = _ramp_point(grid, t)
            return float(vbar_linear(mat, p, q).max() - grid.v_max)

        t = _bisect_ramp(head, t_cap, rel)
        p, q = _ramp_point(grid, t)
        vb = vbar_linear(mat, p, q)
        lf = solve_loadflow(grid, p + 1j * q)
        diff = np.sqrt(vb) - np.sqrt(lf.v)
        j = int(np.argmax(diff))
        return CompressionResult(
            grid_name=grid.name or "grid", mode=mode,
            ramp_mw=float(t * grid.base.s_base_mva), bind_line=j + 1,
            bind_end="", bound_value=float(np.sqrt(vb[j])),
            physical_value=float(np.sqrt(lf.v[j])), gap=float(diff[j]),
            converged=True)

    if mode != "ampacity":
        raise ValueError(f"unknown compression mode {mode!r}")

    imax = grid.i_max_sq

    def evaluate(t: float):
        p, q = _ramp_point(grid, t)
        lf = solve_loadflow(grid, p + 1j * q)
        aux = evaluate_aux(grid, mat, p, q, lf.v)
        top, bot = aux_terminal_currents(grid, aux, lf.v)
        return top, bot, lf, aux

    def head(t: float) -> float:
        try:
            top, bot, _, aux = evaluate(t)
        except LoadFlowError:
            return np.inf
        if not aux.converged:
            return np.inf
        return float((np.maximum(top, bot) / imax).max() - 1.0)

    t = _bisect_ramp(head, t_cap, rel)
    top, bot, lf, aux = evaluate(t)
    ratio = np.maximum(top, bot) / imax
    l = int(np.argmax(ratio))
    end = "top" if top[l] >= bot[l] else "bot"
    v_up = upstream(grid, lf.v, grid.v0)
    S = lf.S_top[l] if end == "top" else lf.S_bot[l]
    vv = v_up[l] if end == "top" else lf.v[l]
    phys = float(np.sqrt((S.real ** 2 + S.imag ** 2) / vv))
    bound = float(np.sqrt(top[l] if end == "top" else bot[l]))
    rating = float(np.sqrt(imax[l]))
    return CompressionResult(
        grid_name=grid.name or "grid", mode=mode,
        ramp_mw=float(t * grid.base.s_base_mva), bind_line=l + 1,
        bind_end=end, bound_value=bound, physical_value=phys,
        gap=float(1.0 - phys / rating), converged=bool(aux.converged))
