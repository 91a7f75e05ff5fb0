"""Optimal power flow models on the squared-voltage branch-flow form.

Three related programs over a radial grid with Pi-lines:

* the plain relaxation (`build_r_opf`): branch-flow equalities with the
  current-definition equality relaxed to a rotated cone, plus voltage
  and ampacity limits on the physical variables;
* the augmented relaxation (`build_ar_opf`): same relaxation, with the
  voltage cap and ampacity limits moved onto a bounding system of
  auxiliary variables (lossless lower flows, a no-loss voltage upper
  bound, loss-majorizing upper flows and a current majorant) so that a
  physically meaningful solution can always be extracted afterwards;
* a feasibility checker for the exact nonconvex problem
  (`o_opf_check`), which defers to the independent load-flow oracle.

Also here: the cost model shared by all programs, the solution record
with its exactness gap, and deterministic evaluators that rebuild the
auxiliary bounding system around a known operating point (used by the
recovery step and by the benchmark harness, no conic solve involved).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .network import RadialGrid, ValidationError, upstream
from .matrices import GridMatrices, OperatingBounds, bounds_from_rule, build_matrices, vbar_linear
from .program import ConicProgram, LinExpr, ProgramResult

__all__ = [
    "CostModel",
    "OpfModel",
    "OpfSolution",
    "AuxState",
    "build_ar_opf",
    "build_r_opf",
    "solve_model",
    "exactness_gap",
    "strict_set",
    "o_opf_check",
    "linear_bounds",
    "fbar_fixed_point",
    "evaluate_aux",
    "aux_terminal_currents",
    "with_cone_slack",
    "GAP_THRESHOLD",
]

# membership threshold for the strict-inequality line set, one order
# above the solver feasibility tolerance
GAP_THRESHOLD = 1e-6


# ---- cost model ------------------------------------------------------------


@dataclass
class CostModel:
    """Separable convex cost: per-bus affine/quadratic terms on the
    injections plus a strictly increasing affine cost on the root
    import P_1."""

    p_lin: np.ndarray
    q_lin: np.ndarray
    p_quad: np.ndarray
    q_quad: np.ndarray
    import_slope: float = 1.0
    import_offset: float = 0.0

    @staticmethod
    def import_only(n_buses: int, slope: float = 1.0) -> "CostModel":
        z = np.zeros(n_buses)
        return CostModel(z.copy(), z.copy(), z.copy(), z.copy(), slope)

    def validate(self, n_buses: int) -> None:
        for name in ("p_lin", "q_lin", "p_quad", "q_quad"):
            arr = getattr(self, name)
            if len(arr) != n_buses:
                raise ValidationError(f"cost {name} has {len(arr)} entries, "
                                      f"grid has {n_buses} buses")
        if self.import_slope <= 0:
            raise ValidationError("import cost slope must be > 0")
        if np.any(self.p_quad < 0) or np.any(self.q_quad < 0):
            raise ValidationError("quadratic cost terms must be >= 0")

    @property
    def has_quadratic(self) -> bool:
        return bool(np.any(self.p_quad > 0) or np.any(self.q_quad > 0))

    def value(self, p: np.ndarray, q: np.ndarray, P1: float) -> float:
        return float(self.p_lin @ p + self.q_lin @ q
                     + self.p_quad @ (p * p) + self.q_quad @ (q * q)
                     + self.import_slope * P1 + self.import_offset)

    # -- file form: "[import] slope = ..." / "[bus 3] p = 50" --------------

    def to_text(self) -> str:
        out = io.StringIO()
        out.write("[import]\n")
        out.write(f"slope = {self.import_slope!r}\n")
        if self.import_offset:
            out.write(f"offset = {self.import_offset!r}\n")
        for i in range(len(self.p_lin)):
            vals = {"p": float(self.p_lin[i]), "q": float(self.q_lin[i]),
                    "p2": float(self.p_quad[i]), "q2": float(self.q_quad[i])}
            vals = {k: v for k, v in vals.items() if v != 0.0}
            if vals:
                out.write(f"\n[bus {i + 1}]\n")
                for k, v in vals.items():
                    out.write(f"{k} = {v!r}\n")
        return out.getvalue()

    @staticmethod
    def from_text(text: str, n_buses: int) -> "CostModel":
        cost = CostModel.import_only(n_buses)
        section = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                parts = line.strip("[]").split()
                if parts[0] == "import":
                    section = ("import", None)
                elif parts[0] == "bus" and len(parts) == 2:
                    i = int(parts[1])
                    if not (1 <= i <= n_buses):
                        raise ValidationError(f"cost line {lineno}: bus {i} "
                                              f"out of range 1..{n_buses}")
                    section = ("bus", i - 1)
                else:
                    raise ValidationError(f"cost line {lineno}: bad section {line!r}")
                continue
            if section is None or "=" not in line:
                raise ValidationError(f"cost line {lineno}: expected key = value")
            key, val = (t.strip() for t in line.split("=", 1))
            val = float(val)
            if section[0] == "import":
                if key == "slope":
                    cost.import_slope = val
                elif key == "offset":
                    cost.import_offset = val
                else:
                    raise ValidationError(f"cost line {lineno}: unknown key {key!r}")
            else:
                i = section[1]
                try:
                    {"p": cost.p_lin, "q": cost.q_lin,
                     "p2": cost.p_quad, "q2": cost.q_quad}[key][i] = val
                except KeyError:
                    raise ValidationError(f"cost line {lineno}: unknown key {key!r}") from None
        cost.validate(n_buses)
        return cost


# ---- model container -------------------------------------------------------


@dataclass
class OpfModel:
    kind: str                      # "aropf" or "ropf"
    program: ConicProgram
    grid: RadialGrid
    cost: CostModel
    bounds: OperatingBounds | None = None


@dataclass
class OpfSolution:
    kind: str
    grid_name: str
    status: str
    objective: float
    solver: str
    eq_residual: float
    ineq_residual: float
    cone_residual: float
    values: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    @property
    def s(self) -> np.ndarray:
        return self.values["p"] + 1j * self.values["q"]

    # -- structured text round trip ------------------------------------

    def to_text(self) -> str:
        out = io.StringIO()
        out.write("# radialopf solution\n")
        out.write(f"kind = {self.kind}\n")
        out.write(f"grid = {self.grid_name}\n")
        out.write(f"status = {self.status}\n")
        out.write(f"objective = {float(self.objective)!r}\n")
        out.write(f"solver = {self.solver}\n")
        out.write(f"eq_residual = {float(self.eq_residual)!r}\n")
        out.write(f"ineq_residual = {float(self.ineq_residual)!r}\n")
        out.write(f"cone_residual = {float(self.cone_residual)!r}\n")
        out.write("[values]\n")
        for key, arr in self.values.items():
            body = " ".join(repr(float(x)) for x in arr)
            out.write(f"{key} = {body}\n")
        return out.getvalue()

    @staticmethod
    def from_text(text: str) -> "OpfSolution":
        meta: dict[str, str] = {}
        values: dict[str, np.ndarray] = {}
        in_values = False
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line == "[values]":
                in_values = True
                continue
            if "=" not in line:
                raise ValidationError(f"bad solution line {raw!r}")
            key, val = (t.strip() for t in line.split("=", 1))
            if in_values:
                values[key] = np.array([float(t) for t in val.split()])
            else:
                meta[key] = val
        try:
            return OpfSolution(
                kind=meta["kind"], grid_name=meta["grid"], status=meta["status"],
                objective=float(meta["objective"]), solver=meta["solver"],
                eq_residual=float(meta["eq_residual"]),
                ineq_residual=float(meta["ineq_residual"]),
                cone_residual=float(meta["cone_residual"]), values=values)
        except KeyError as exc:
            raise ValidationError(f"solution file missing field {exc}") from None


def exactness_gap(sol: OpfSolution, grid: RadialGrid) -> np.ndarray:
    """Per-line slack of the relaxed current definition:
    gap_l = f_l - (P_l^2 + (Q_l + v_up b_l)^2) / v_up. Zero means the
    relaxation is tight on that line."""
    v_up = upstream(grid, sol.values["v"], grid.v0)
    Qc = sol.values["Q"] + v_up * grid.b
    rhs = (sol.values["P"] ** 2 + Qc ** 2) / v_up
    return sol.values["f"] - rhs


def strict_set(sol: OpfSolution, grid: RadialGrid,
               threshold: float = GAP_THRESHOLD) -> np.ndarray:
    """0-based indices of lines where the relaxation is strictly loose."""
    return np.flatnonzero(exactness_gap(sol, grid) > threshold)


# ---- program assembly ------------------------------------------------------


def _abs_rows(prog: ConicProgram, slack: LinExpr, expr: LinExpr, tag: str) -> None:
    """slack >= |expr| as two linear rows."""
    prog.add_le(expr - slack, tag + "+")
    prog.add_le(expr * -1.0 - slack, tag + "-")


def _injection_rows(prog: ConicProgram, grid: RadialGrid, p, q) -> None:
    """Injection-set constraints per bus: box limits, and the power
    factor couplings where requested."""
    for i, bus in enumerate(grid.buses):
        prog.add_range(p[i], bus.p_min, bus.p_max, f"inj-p[{i + 1}]")
        iset = bus.injection_set
        if iset is None or iset.kind == "box":
            prog.add_range(q[i], bus.q_min, bus.q_max, f"inj-q[{i + 1}]")
            continue
        # sign-definite active range (validated), |p| = sgn * p
        sgn = 1.0 if bus.p_min >= 0 else -1.0
        kap = iset.kappa
        if iset.kind == "fixed_power_factor":
            sig = 1.0 if iset.lead else -1.0
            prog.add_eq(q[i] - (p[i] * (sig * kap * sgn)), f"inj-pf[{i + 1}]")
        else:  # minimum power factor: |q| <= kappa |p|
            _abs_rows(prog, p[i] * (kap * sgn), q[i], f"inj-pf[{i + 1}]")


def _objective(prog: ConicProgram, cost: CostModel, p, q, P) -> None:
    L = len(cost.p_lin)
    obj = LinExpr.constant(cost.import_offset) + P[0] * cost.import_slope
    for i in range(L):
        obj = obj + p[i] * cost.p_lin[i] + q[i] * cost.q_lin[i]
    if cost.has_quadratic:
        tquad = prog.add_block("t_quad", 2 * L)
        for i in range(L):
            if cost.p_quad[i] > 0:
                prog.add_rsoc([p[i]], tquad[i], LinExpr.constant(1.0),
                              f"cone-cost-p[{i + 1}]")
                obj = obj + tquad[i] * cost.p_quad[i]
            if cost.q_quad[i] > 0:
                prog.add_rsoc([q[i]], tquad[L + i], LinExpr.constant(1.0),
                              f"cone-cost-q[{i + 1}]")
                obj = obj + tquad[L + i] * cost.q_quad[i]
    prog.set_objective(obj)


def _physical_rows(prog: ConicProgram, grid: RadialGrid, blocks) -> None:
    """Branch-flow equalities and the relaxed current cone, shared by
    both models."""
    p, q = blocks["p"], blocks["q"]
    P, Q, Pb, Qb = blocks["P"], blocks["Q"], blocks["Pb"], blocks["Qb"]
    v, f = blocks["v"], blocks["f"]
    L = grid.n_lines
    kids = grid.children()
    r, x, b = grid.r, grid.x, grid.b
    zsq = np.abs(grid.z) ** 2
    v0 = grid.v0
    up = grid.up

    def vup(l):
        return LinExpr.constant(v0) if up[l] == 0 else v[up[l] - 1]

    for l in range(L):
        sum_P = LinExpr()
        sum_Q = LinExpr()
        for m in kids[l]:
            sum_P = sum_P + P[m]
            sum_Q = sum_Q + Q[m]
        # bottom flow collects the bus injection and the children's tops
        prog.add_eq(Pb[l] - p[l] - sum_P, f"balance-bot-P[{l + 1}]")
        prog.add_eq(Qb[l] - q[l] - sum_Q, f"balance-bot-Q[{l + 1}]")
        # series element adds the longitudinal loss, shunts take reactive
        prog.add_eq(P[l] - Pb[l] - f[l] * r[l], f"series-P[{l + 1}]")
        prog.add_eq(Q[l] - Qb[l] - f[l] * x[l] + (vup(l) + v[l]) * b[l],
                    f"series-Q[{l + 1}]")
        # squared-voltage drop along the series impedance
        prog.add_eq(v[l] - vup(l) + (P[l] * r[l] + (Q[l] + vup(l) * b[l]) * x[l]) * 2.0
                    - f[l] * zsq[l], f"volt-drop[{l + 1}]")
        # relaxed current definition, tight at exact solutions
        prog.add_rsoc([P[l], Q[l] + vup(l) * b[l]], f[l], vup(l),
                      f"cone-current[{l + 1}]")


def build_r_opf(grid: RadialGrid, cost: CostModel | None = None) -> OpfModel:
    """Plain convex relaxation: physical rows, voltage band on v, and
    terminal ampacity on the physical flows at both line ends."""
    grid.validate(allow_zero_shunt=True)
    L = grid.n_lines
    cost = cost or CostModel.import_only(L)
    cost.validate(L)
    prog = ConicProgram()
    blocks = {name: prog.add_block(name, L)
              for name in ("p", "q", "P", "Q", "Pb", "Qb", "v", "f")}
    _physical_rows(prog, grid, blocks)
    _injection_rows(prog, grid, blocks["p"], blocks["q"])
    v, f = blocks["v"], blocks["f"]
    P, Q, Pb, Qb = blocks["P"], blocks["Q"], blocks["Pb"], blocks["Qb"]
    imax = grid.i_max_sq
    up = grid.up
    for l in range(L):
        prog.add_range(v[l], grid.v_min, grid.v_max, f"v-band[{l + 1}]")
        vup = LinExpr.constant(grid.v0) if up[l] == 0 else v[up[l] - 1]
        prog.add_rsoc([Pb[l], Qb[l]], v[l], LinExpr.constant(imax[l]),
                      f"cone-ampacity-bot[{l + 1}]")
        prog.add_rsoc([P[l], Q[l]], vup, LinExpr.constant(imax[l]),
                      f"cone-ampacity-top[{l + 1}]")
        prog.add_le(f[l] * -1.0, f"f-sign[{l + 1}]")
    _objective(prog, cost, blocks["p"], blocks["q"], blocks["P"])
    return OpfModel("ropf", prog, grid, cost, None)


#: variable blocks of the augmented model, in solution-file order
AR_BLOCKS = ("p", "q", "P", "Q", "Pb", "Qb", "v", "f",
             "Ph", "Qh", "Phb", "Qhb", "vb",
             "Pbar", "Qbar", "Pbarb", "Qbarb", "fbar",
             "s1b", "s2b", "s1t", "s2t", "a2b", "a2t")


def build_ar_opf(grid: RadialGrid, bounds: OperatingBounds | None = None,
                 cost: CostModel | None = None, rule: str = "pct110") -> OpfModel:
    """Augmented relaxation.

    On top of the physical rows, a bounding system is built from the
    same injections: lossless lower flows (Ph, Qh) with a matching
    upper voltage vb, loss-majorizing upper flows (Pbar, Qbar) driven
    by a current majorant fbar, and bottom-end copies of both. The
    voltage cap lands on vb, the ampacity caps land on the envelope
    max(|lower|, |upper|) at each line end, and the upper flows are
    capped by the operating bounds. Slack variables s1*/s2*/a2* carry
    the per-end absolute values into the cones.
    """
    grid.validate(allow_zero_shunt=True)
    L = grid.n_lines
    cost = cost or CostModel.import_only(L)
    cost.validate(L)
    if bounds is None:
        bounds = bounds_from_rule(grid, rule)
    bounds.validate(L)

    prog = ConicProgram()
    blocks = {name: prog.add_block(name, L) for name in AR_BLOCKS}
    _physical_rows(prog, grid, blocks)
    _injection_rows(prog, grid, blocks["p"], blocks["q"])

    p, q = blocks["p"], blocks["q"]
    P, Q, v, f = blocks["P"], blocks["Q"], blocks["v"], blocks["f"]
    Ph, Qh, Phb, Qhb, vb = (blocks[k] for k in ("Ph", "Qh", "Phb", "Qhb", "vb"))
    Pbar, Qbar, Pbarb, Qbarb, fbar = (blocks[k] for k in
                                      ("Pbar", "Qbar", "Pbarb", "Qbarb", "fbar"))
    s1b, s2b, s1t, s2t, a2b, a2t = (blocks[k] for k in
                                    ("s1b", "s2b", "s1t", "s2t", "a2b", "a2t"))

    kids = grid.children()
    r, x, b = grid.r, grid.x, grid.b
    v0 = grid.v0
    up = grid.up
    imax = grid.i_max_sq

    def vup(l):
        return LinExpr.constant(v0) if up[l] == 0 else v[up[l] - 1]

    def vbup(l):
        return LinExpr.constant(v0) if up[l] == 0 else vb[up[l] - 1]

    for l in range(L):
        sum_Ph = LinExpr()
        sum_Qh = LinExpr()
        sum_Pbar = LinExpr()
        sum_Qbar = LinExpr()
        for m in kids[l]:
            sum_Ph = sum_Ph + Ph[m]
            sum_Qh = sum_Qh + Qh[m]
            sum_Pbar = sum_Pbar + Pbar[m]
            sum_Qbar = sum_Qbar + Qbar[m]

        # lower flows: lossless balance, shunts valued at the upper voltage
        prog.add_eq(Ph[l] - p[l] - sum_Ph, f"lb-flow-P[{l + 1}]")
        prog.add_eq(Qh[l] - q[l] - sum_Qh + (vbup(l) + vb[l]) * b[l],
                    f"lb-flow-Q[{l + 1}]")
        prog.add_eq(Phb[l] - p[l] - sum_Ph, f"lb-flow-bot-P[{l + 1}]")
        prog.add_eq(Qhb[l] - q[l] - sum_Qh, f"lb-flow-bot-Q[{l + 1}]")
        # upper voltage: drop of the lower flows, no loss term
        prog.add_eq(vb[l] - vbup(l)
                    + (Ph[l] * r[l] + (Qh[l] + vbup(l) * b[l]) * x[l]) * 2.0,
                    f"ub-volt[{l + 1}]")
        # upper flows: loss majorant fbar in series, physical v in shunts
        prog.add_eq(Pbar[l] - p[l] - sum_Pbar - fbar[l] * r[l],
                    f"ub-flow-P[{l + 1}]")
        prog.add_eq(Qbar[l] - q[l] - sum_Qbar - fbar[l] * x[l]
                    + (vup(l) + v[l]) * b[l], f"ub-flow-Q[{l + 1}]")
        prog.add_eq(Pbarb[l] - p[l] - sum_Pbar, f"ub-flow-bot-P[{l + 1}]")
        prog.add_eq(Qbarb[l] - q[l] - sum_Qbar, f"ub-flow-bot-Q[{l + 1}]")

        # security: floor on physical v, cap on the voltage upper bound
        prog.add_le(LinExpr.constant(grid.v_min) - v[l], f"v-floor[{l + 1}]")
        prog.add_le(vb[l] - grid.v_max, f"v-cap[{l + 1}]")

        # envelope slacks, bottom end
        _abs_rows(prog, s1b[l], Phb[l], f"abs-P-bot-lb[{l + 1}]")
        _abs_rows(prog, s1b[l], Pbarb[l], f"abs-P-bot-ub[{l + 1}]")
        _abs_rows(prog, s2b[l], Qhb[l] - vb[l] * b[l], f"abs-Qs-bot-lb[{l + 1}]")
        _abs_rows(prog, s2b[l], Qbarb[l] - v[l] * b[l], f"abs-Qs-bot-ub[{l + 1}]")
        _abs_rows(prog, a2b[l], Qhb[l], f"abs-Q-bot-lb[{l + 1}]")
        _abs_rows(prog, a2b[l], Qbarb[l], f"abs-Q-bot-ub[{l + 1}]")
        # envelope slacks, top end
        _abs_rows(prog, s1t[l], Ph[l], f"abs-P-top-lb[{l + 1}]")
        _abs_rows(prog, s1t[l], Pbar[l], f"abs-P-top-ub[{l + 1}]")
        _abs_rows(prog, s2t[l], Qh[l] + vbup(l) * b[l], f"abs-Qs-top-lb[{l + 1}]")
        _abs_rows(prog, s2t[l], Qbar[l] + vup(l) * b[l], f"abs-Qs-top-ub[{l + 1}]")
        _abs_rows(prog, a2t[l], Qh[l], f"abs-Q-top-lb[{l + 1}]")
        _abs_rows(prog, a2t[l], Qbar[l], f"abs-Q-top-ub[{l + 1}]")

        # current majorant: envelope squared over the end voltage
        prog.add_rsoc([s1b[l], s2b[l]], fbar[l], v[l],
                      f"cone-ub-current-bot[{l + 1}]")
        prog.add_rsoc([s1t[l], s2t[l]], fbar[l], vup(l),
                      f"cone-ub-current-top[{l + 1}]")
        # ampacity on the envelope, both ends
        prog.add_rsoc([s1b[l], a2b[l]], v[l], LinExpr.constant(imax[l]),
                      f"cone-ampacity-bot[{l + 1}]")
        prog.add_rsoc([s1t[l], a2t[l]], vup(l), LinExpr.constant(imax[l]),
                      f"cone-ampacity-top[{l + 1}]")

        # ordering and operating caps on the upper flows; these are
        # bookkeeping bounds, not physical limits
        prog.add_le(P[l] - Pbar[l], f"aux-technical-P-order[{l + 1}]")
        prog.add_le(Pbar[l] - bounds.p_line_max[l], f"aux-technical-P-cap[{l + 1}]")
        prog.add_le(Q[l] - Qbar[l], f"aux-technical-Q-order[{l + 1}]")
        prog.add_le(Qbar[l] - bounds.q_line_max[l], f"aux-technical-Q-cap[{l + 1}]")

        prog.add_le(f[l] * -1.0, f"f-sign[{l + 1}]")
        prog.add_le(fbar[l] * -1.0, f"fbar-sign[{l + 1}]")

    _objective(prog, cost, p, q, P)
    return OpfModel("aropf", prog, grid, cost, bounds)


def solve_model(model: OpfModel, solver: str = "clarabel",
                feas_tol: float = 1e-8, gap_tol: float = 1e-8,
                verbose: bool = False) -> OpfSolution:
    res: ProgramResult = model.program.solve(
        solver=solver, feas_tol=feas_tol, gap_tol=gap_tol, verbose=verbose)
    values: dict[str, np.ndarray] = {}
    if res.x is not None:
        for name, blk in model.program.blocks.items():
            values[name] = np.array(res.x[blk.start:blk.start + blk.size])
    return OpfSolution(
        kind=model.kind, grid_name=model.grid.name or "grid",
        status=res.status, objective=res.objective, solver=res.solver,
        eq_residual=res.eq_residual, ineq_residual=res.ineq_residual,
        cone_residual=res.cone_residual, values=values)


# ---- exact-model feasibility through the oracle ----------------------------


def o_opf_check(grid: RadialGrid, s: np.ndarray, tol: float = 1e-9):
    """Feasibility check of the exact nonconvex model for fixed
    injections: run the independent load-flow oracle and list the
    operational violations. Returns (LoadFlowResult, violations)."""
    from .loadflow import check_operational, solve_loadflow

    lf = solve_loadflow(grid, s)
    return lf, check_operational(grid, lf, tol)


# ---- deterministic evaluation of the bounding system -----------------------


@dataclass
class AuxState:
    """Bounding system evaluated around a fixed operating point."""

    Ph: np.ndarray
    Qh: np.ndarray
    Phb: np.ndarray
    Qhb: np.ndarray
    vb: np.ndarray
    fbar: np.ndarray
    Pbar: np.ndarray
    Qbar: np.ndarray
    Pbarb: np.ndarray
    Qbarb: np.ndarray
    converged: bool = True


def linear_bounds(grid: RadialGrid, mat: GridMatrices, p: np.ndarray,
                  q: np.ndarray):
    """Closed-form part of the bounding system: lossless flows and the
    upper voltage, which depend on the injections only.

    Returns (Ph, Qh, Phb, Qhb, vb).
    """
    H = mat.H
    vb = vbar_linear(mat, p, q)
    vbup = upstream(grid, vb, grid.v0)
    shunt = (vbup + vb) * grid.b
    Ph = H @ p
    Phb = Ph.copy()
    Qh = H @ q - H @ shunt
    Qhb = Qh + shunt
    return Ph, Qh, Phb, Qhb, vb


def fbar_fixed_point(grid: RadialGrid, p: np.ndarray, q: np.ndarray,
                     v: np.ndarray, Ph, Qh, Phb, Qhb, vb,
                     f_start: np.ndarray | None = None,
                     f_floor: np.ndarray | None = None,
                     tol: float = 1e-12, max_iter: int = 1000):
    """Smallest current majorant consistent with the upper flows it
    drives, at fixed physical voltages v.

    Iterates: upper flows from fbar, then fbar from the envelope at
    both line ends. Returns (fbar, Pbar, Qbar, Pbarb, Qbarb, converged).

    f_floor, when given, keeps every iterate at or above it, yielding
    the least majorant that also dominates a prescribed current; the
    map stays monotone so the fixed point is still the smallest such.
    """
    L = grid.n_lines
    r, x, b = grid.r, grid.x, grid.b
    v_up = upstream(grid, v, grid.v0)
    vbup = upstream(grid, vb, grid.v0)
    kids = grid.children()
    order = list(range(L - 1, -1, -1))
    fbar = np.zeros(L) if f_start is None else np.array(f_start, dtype=float)
    Pbar = np.zeros(L)
    Qbar = np.zeros(L)
    converged = False
    for _ in range(max_iter):
        # upper flows for the current majorant (reverse sweep)
        for l in order:
            sp = sum(Pbar[m] for m in kids[l])
            sq = sum(Qbar[m] for m in kids[l])
            Pbar[l] = p[l] + sp + r[l] * fbar[l]
            Qbar[l] = q[l] + sq + x[l] * fbar[l] - (v_up[l] + v[l]) * b[l]
        Pbarb = Pbar - r * fbar
        Qbarb = Qbar - x * fbar + (v_up + v) * b
        top = (np.maximum(np.abs(Ph), np.abs(Pbar)) ** 2
               + np.maximum(np.abs(Qh + vbup * b), np.abs(Qbar + v_up * b)) ** 2) / v_up
        bot = (np.maximum(np.abs(Phb), np.abs(Pbarb)) ** 2
               + np.maximum(np.abs(Qhb - vb * b), np.abs(Qbarb - v * b)) ** 2) / v
        fbar_new = np.maximum(top, bot)
        if f_floor is not None:
            fbar_new = np.maximum(fbar_new, f_floor)
        delta = float(np.max(np.abs(fbar_new - fbar)))
        fbar = fbar_new
        if delta <= tol:
            converged = True
            break
    # final flows at the settled majorant
    for l in order:
        sp = sum(Pbar[m] for m in kids[l])
        sq = sum(Qbar[m] for m in kids[l])
        Pbar[l] = p[l] + sp + r[l] * fbar[l]
        Qbar[l] = q[l] + sq + x[l] * fbar[l] - (v_up[l] + v[l]) * b[l]
    Pbarb = Pbar - r * fbar
    Qbarb = Qbar - x * fbar + (v_up + v) * b
    return fbar, Pbar, Qbar, Pbarb, Qbarb, converged


def evaluate_aux(grid: RadialGrid, mat: GridMatrices, p: np.ndarray,
                 q: np.ndarray, v: np.ndarray,
                 f: np.ndarray | None = None,
                 f_floor: np.ndarray | None = None) -> AuxState:
    """Full bounding system around an operating point (p, q, v): linear
    part in closed form, current majorant by fixed point seeded at f
    (and floored at f_floor when given)."""
    Ph, Qh, Phb, Qhb, vb = linear_bounds(grid, mat, p, q)
    fbar, Pbar, Qbar, Pbarb, Qbarb, convd = fbar_fixed_point(
        grid, p, q, v, Ph, Qh, Phb, Qhb, vb, f_start=f, f_floor=f_floor)
    return AuxState(Ph, Qh, Phb, Qhb, vb, fbar, Pbar, Qbar, Pbarb, Qbarb, convd)


def aux_terminal_currents(grid: RadialGrid, aux: AuxState, v: np.ndarray):
    """Squared envelope currents at both line ends, the quantities the
    augmented ampacity caps act on. Returns (top, bottom)."""
    v_up = upstream(grid, v, grid.v0)
    top = (np.maximum(np.abs(aux.Ph), np.abs(aux.Pbar)) ** 2
           + np.maximum(np.abs(aux.Qh), np.abs(aux.Qbar)) ** 2) / v_up
    bot = (np.maximum(np.abs(aux.Phb), np.abs(aux.Pbarb)) ** 2
           + np.maximum(np.abs(aux.Qhb), np.abs(aux.Qbarb)) ** 2) / v
    return top, bot


def with_cone_slack(solution: OpfSolution, grid: RadialGrid,
                    mat: GridMatrices, amount: float,
                    lines=None, tol: float = 1e-9) -> OpfSolution:
    """Feasible augmented point with real cone slack, built from an
    exact solution.

    The squared current is inflated by `amount` on the given 1-based
    lines (all lines by default), the flow and voltage equalities are
    re-solved around the prescribed currents, and the bounding system
    is re-evaluated at the new voltages. Every model row then holds
    and the current cone has slack of at least `amount` on the chosen
    lines, which is the input extraction is supposed to repair.

    Raises ValidationError when the inflated point leaves the feasible
    set; pick a smaller amount or a point with wider operating margins.
    The objective is not re-evaluated (stored as nan).
    """
    from .loadflow import prescribed_current_state

    vals = solution.values
    f = vals["f"].copy()
    idx = (np.arange(grid.n_lines) if lines is None
           else np.asarray(lines, dtype=int) - 1)
    f[idx] += amount

    st = prescribed_current_state(grid, solution.s, f)
    aux = evaluate_aux(grid, mat, vals["p"], vals["q"], st.v,
                       f=f, f_floor=f)
    if not aux.converged:
        raise ValidationError("current majorant did not settle at the "
                              "perturbed voltages")

    def ensure(ok: bool, what: str) -> None:
        if not ok:
            raise ValidationError(f"inflating f by {amount} breaks {what}")

    bounds = mat.bounds
    env_top, env_bot = aux_terminal_currents(grid, aux, st.v)
    ensure(bool(np.all(st.v >= grid.v_min - tol)), "the voltage floor")
    ensure(bool(np.all(aux.vb <= grid.v_max + tol)), "the voltage cap")
    ensure(bool(np.all(st.S_top.real <= aux.Pbar + tol)), "P <= Pbar")
    ensure(bool(np.all(st.S_top.imag <= aux.Qbar + tol)), "Q <= Qbar")
    ensure(bool(np.all(aux.Pbar <= bounds.p_line_max + tol)), "the P cap")
    ensure(bool(np.all(aux.Qbar <= bounds.q_line_max + tol)), "the Q cap")
    ensure(bool(np.all(env_top <= grid.i_max_sq + tol)), "top ampacity")
    ensure(bool(np.all(env_bot <= grid.i_max_sq + tol)), "bottom ampacity")

    values = {
        "p": vals["p"].copy(), "q": vals["q"].copy(),
        "P": st.S_top.real.copy(), "Q": st.S_top.imag.copy(),
        "Pb": st.S_bot.real.copy(), "Qb": st.S_bot.imag.copy(),
        "v": st.v.copy(), "f": f,
        "Ph": aux.Ph, "Qh": aux.Qh, "Phb": aux.Phb, "Qhb": aux.Qhb,
        "vb": aux.vb, "fbar": aux.fbar,
        "Pbar": aux.Pbar, "Qbar": aux.Qbar,
        "Pbarb": aux.Pbarb, "Qbarb": aux.Qbarb,
    }
    return OpfSolution(
        kind=solution.kind, grid_name=solution.grid_name,
        status="perturbed", objective=float("nan"), solver=solution.solver,
        eq_residual=st.residual, ineq_residual=0.0,
        cone_residual=0.0, values=values)
