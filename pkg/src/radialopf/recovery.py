"""Fixed-point extraction of a physical operating point from a relaxed
solution.

A solution of the augmented relaxation may leave slack in the current
cone on some lines. The map iterated here closes that slack: starting
from the relaxed point, the squared current is recomputed from the
central flows, then the flows and voltages are refreshed through the
closed-form sensitivity matrices, until the current vector stops
moving. The limit is a load-flow point for the same injections, and
when the contraction conditions hold the iterates stay inside the
bounding envelopes recorded by the solver, so the limit is feasible
for the original security constraints as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matrices import GridMatrices
from .network import RadialGrid, upstream
from .opf import AuxState, OpfSolution, fbar_fixed_point
from .loadflow import LoadFlowResult, check_operational, residuals, solve_loadflow

__all__ = [
    "RecoveryError",
    "RecoveryTrace",
    "recover",
    "recovered_solution",
    "FixedPointReport",
    "verify_fixed_point",
    "EnvelopeViolation",
    "envelope_report",
    "upstream_of_all",
]


class RecoveryError(Exception):
    pass


@dataclass
class RecoveryTrace:
    """Iterates of the extraction map: row n holds iteration n
    (row 0 = relaxed input). delta_f norms start at n = 1."""

    f: np.ndarray          # (N+1, L)
    P: np.ndarray
    Qc: np.ndarray
    v: np.ndarray
    delta_f_inf: np.ndarray
    delta_f_2: np.ndarray
    converged: bool
    s: np.ndarray          # complex injections, fixed throughout
    # settled point and the bounding system rebuilt around it
    P_star: np.ndarray = field(default=None)
    Q_star: np.ndarray = field(default=None)
    v_star: np.ndarray = field(default=None)
    f_star: np.ndarray = field(default=None)
    aux_star: AuxState = field(default=None)

    @property
    def n_iterations(self) -> int:
        return self.f.shape[0] - 1

    @property
    def S_star(self) -> np.ndarray:
        return self.P_star + 1j * self.Q_star

    def S_bot_star(self, grid: RadialGrid) -> np.ndarray:
        S_bot = np.asarray(self.s, dtype=complex).copy()
        kids = grid.children()
        for l in range(grid.n_lines):
            for m in kids[l]:
                S_bot[l] += self.S_star[m]
        return S_bot


def recover(solution: OpfSolution, grid: RadialGrid, mat: GridMatrices,
            tol: float = 1e-12, max_iter: int = 200) -> RecoveryTrace:
    """Iterate the extraction map on a relaxed solution.

    Stops when the sup-norm step of the squared current drops to tol.
    Raises RecoveryError on sustained growth (ten consecutive growing
    steps, the signature of violated contraction conditions) and on a
    nonpositive voltage iterate.
    """
    need = ("p", "q", "P", "Q", "v", "f", "Ph", "Qh", "vb", "fbar",
            "Pbar", "Qbar")
    missing = [k for k in need if k not in solution.values]
    if missing:
        raise RecoveryError(f"solution lacks fields {missing}; an augmented-"
                            "model solution is required")
    vals = solution.values
    p, q = vals["p"], vals["q"]
    v0 = grid.v0
    b = grid.b

    Ph = vals["Ph"]
    vb = vals["vb"]
    vbup = upstream(grid, vb, v0)
    Qhc = vals["Qh"] + b * vbup  # central form of the lossless lower flow

    f_rows = [vals["f"].copy()]
    v_rows = [vals["v"].copy()]
    P_rows = [vals["P"].copy()]
    Qc_rows = [vals["Q"] + b * upstream(grid, vals["v"], v0)]
    d_inf: list[float] = []
    d_2: list[float] = []

    converged = False
    grow_streak = 0
    for _ in range(max_iter):
        v_prev, P_prev, Qc_prev, f_prev = v_rows[-1], P_rows[-1], Qc_rows[-1], f_rows[-1]
        v_up = upstream(grid, v_prev, v0)
        f_n = (P_prev ** 2 + Qc_prev ** 2) / v_up
        P_n = Ph + mat.Hr @ f_n
        Qc_n = Qhc + mat.F @ f_n
        v_n = vb - mat.D @ f_n
        if np.any(v_n <= 0):
            raise RecoveryError("voltage iterate reached zero; extraction "
                                "aborted (injections beyond the certified range)")
        step = f_n - f_prev
        d_inf.append(float(np.max(np.abs(step))))
        d_2.append(float(np.linalg.norm(step)))
        f_rows.append(f_n)
        P_rows.append(P_n)
        Qc_rows.append(Qc_n)
        v_rows.append(v_n)
        if d_inf[-1] <= tol:
            converged = True
            break
        if len(d_inf) >= 2 and d_inf[-1] > d_inf[-2]:
            grow_streak += 1
            if grow_streak >= 10:
                raise RecoveryError(
                    "current-step norm grew for 10 consecutive iterations; "
                    "the contraction conditions do not hold at this point")
        else:
            grow_streak = 0

    trace = RecoveryTrace(
        f=np.array(f_rows), P=np.array(P_rows), Qc=np.array(Qc_rows),
        v=np.array(v_rows), delta_f_inf=np.array(d_inf),
        delta_f_2=np.array(d_2), converged=converged, s=p + 1j * q)
    if not converged:
        return trace

    v_star = v_rows[-1]
    f_star = f_rows[-1]
    P_star = P_rows[-1]
    v_up_star = upstream(grid, v_star, v0)
    Q_star = Qc_rows[-1] - b * v_up_star
    trace.P_star, trace.Q_star = P_star, Q_star
    trace.v_star, trace.f_star = v_star, f_star

    # rebuild the current majorant and upper flows around the settled
    # point; the linear bounding quantities are unchanged (they depend
    # on the injections only), so the solver's values are kept
    Qh, Phb = vals["Qh"], vals.get("Phb", Ph.copy())
    Qhb = vals.get("Qhb", Qh + (vbup + vb) * b)
    fbar, Pbar, Qbar, Pbarb, Qbarb, convd = fbar_fixed_point(
        grid, p, q, v_star, Ph, Qh, Phb, Qhb, vb, f_start=f_star)
    trace.aux_star = AuxState(Ph, Qh, Phb, Qhb, vb, fbar, Pbar, Qbar,
                              Pbarb, Qbarb, convd)
    return trace


# ---- verification ----------------------------------------------------------


@dataclass
class FixedPointReport:
    """Checks that the settled point delivers what the extraction map
    promises: a physical load flow for the same injections, inside the
    operational limits, and cheaper whenever the input had cone slack."""

    eq_residual: float
    oracle_max_dev: float
    violations: list
    voltage_sandwich_ok: bool
    strict_lines: np.ndarray
    import_decrease: float
    eq_tol: float = 1e-10
    oracle_tol: float = 1e-8
    decrease_tol: float = 1e-10

    @property
    def physical(self) -> bool:
        return self.eq_residual <= self.eq_tol

    @property
    def matches_oracle(self) -> bool:
        return self.oracle_max_dev <= self.oracle_tol

    @property
    def operational(self) -> bool:
        return len(self.violations) == 0

    @property
    def import_strictly_lower(self) -> bool:
        if len(self.strict_lines) == 0:
            return True  # vacuous: input was already exact
        return self.import_decrease > self.decrease_tol

    @property
    def ok(self) -> bool:
        return (self.physical and self.matches_oracle and self.operational
                and self.voltage_sandwich_ok and self.import_strictly_lower)

    def failures(self) -> list[str]:
        out = []
        if not self.physical:
            out.append(f"flow-equation residual {self.eq_residual:.3e}")
        if not self.matches_oracle:
            out.append(f"oracle deviation {self.oracle_max_dev:.3e}")
        if not self.operational:
            out.append(f"{len(self.violations)} operational violations")
        if not self.voltage_sandwich_ok:
            out.append("voltage ordering v <= v* <= vb broken")
        if not self.import_strictly_lower:
            out.append("no strict import decrease despite cone slack")
        return out


def verify_fixed_point(trace: RecoveryTrace, solution: OpfSolution,
                       grid: RadialGrid,
                       gap_threshold: float = 1e-6,
                       sandwich_tol: float = 1e-8) -> FixedPointReport:
    """Verify the settled point against the independent oracle and the
    operational limits."""
    if not trace.converged:
        raise RecoveryError("trace did not converge; nothing to verify")
    from .opf import strict_set

    s = trace.s
    S_top = trace.S_star
    S_bot = trace.S_bot_star(grid)
    eq_res = residuals(grid, s, S_top, S_bot, trace.v_star, trace.f_star)

    lf = solve_loadflow(grid, s)
    oracle_dev = max(
        float(np.max(np.abs(trace.v_star - lf.v))),
        float(np.max(np.abs(trace.f_star - lf.f))),
        float(np.max(np.abs(S_top - lf.S_top))),
    )

    state = LoadFlowResult(s=s, S_top=S_top, S_bot=S_bot, v=trace.v_star,
                           f=trace.f_star, iterations=trace.n_iterations,
                           residual=eq_res)
    violations = check_operational(grid, state)

    vb = solution.values["vb"]
    v_in = solution.values["v"]
    sandwich = (np.all(v_in <= trace.v_star + sandwich_tol)
                and np.all(trace.v_star <= vb + sandwich_tol)
                and np.all(vb <= grid.v_max + sandwich_tol)
                and np.all(v_in >= grid.v_min - sandwich_tol))

    strict = strict_set(solution, grid, gap_threshold)
    decrease = float(solution.values["P"][0] - trace.P_star[0])

    return FixedPointReport(
        eq_residual=eq_res, oracle_max_dev=oracle_dev, violations=violations,
        voltage_sandwich_ok=bool(sandwich), strict_lines=strict,
        import_decrease=decrease)


def recovered_solution(trace: RecoveryTrace, solution: OpfSolution,
                       grid: RadialGrid) -> OpfSolution:
    """Package the settled point in the solution-file schema.

    Injections are carried over unchanged from the input. The residual
    slots are reused for the natural post-recovery quantities: the flow
    equation defect, the worst operating-limit excess, and the worst
    remaining relaxation gap. The objective of the input model is not
    re-evaluated here (no cost data at this stage) and is stored as nan.
    """
    if not trace.converged:
        raise RecoveryError("trace did not converge; nothing to package")
    aux = trace.aux_star
    S_bot = trace.S_bot_star(grid)
    values = {
        "p": trace.s.real.copy(), "q": trace.s.imag.copy(),
        "P": trace.P_star.copy(), "Q": trace.Q_star.copy(),
        "Pb": S_bot.real.copy(), "Qb": S_bot.imag.copy(),
        "v": trace.v_star.copy(), "f": trace.f_star.copy(),
        "Ph": aux.Ph.copy(), "Qh": aux.Qh.copy(),
        "Phb": aux.Phb.copy(), "Qhb": aux.Qhb.copy(),
        "vb": aux.vb.copy(), "fbar": aux.fbar.copy(),
        "Pbar": aux.Pbar.copy(), "Qbar": aux.Qbar.copy(),
        "Pbarb": aux.Pbarb.copy(), "Qbarb": aux.Qbarb.copy(),
    }
    eq_res = residuals(grid, trace.s, trace.S_star, S_bot,
                       trace.v_star, trace.f_star)
    state = LoadFlowResult(s=trace.s, S_top=trace.S_star, S_bot=S_bot,
                           v=trace.v_star, f=trace.f_star,
                           iterations=trace.n_iterations, residual=eq_res)
    worst_op = max((exc for _, _, exc in check_operational(grid, state)),
                   default=0.0)
    v_up = upstream(grid, trace.v_star, grid.v0)
    Qc = trace.Q_star + grid.b * v_up
    gap = trace.f_star - (trace.P_star ** 2 + Qc ** 2) / v_up
    return OpfSolution(
        kind=f"recovered-{solution.kind}", grid_name=solution.grid_name,
        status="recovered", objective=float("nan"), solver=solution.solver,
        eq_residual=float(eq_res), ineq_residual=float(worst_op),
        cone_residual=float(np.max(np.abs(gap))), values=values)


# ---- iterate envelopes -----------------------------------------------------


def upstream_of_all(mat: GridMatrices, lines: np.ndarray) -> np.ndarray:
    """0-based indices of lines whose subtree contains every line in
    `lines` (the common upstream path)."""
    if len(lines) == 0:
        return np.array([], dtype=int)
    return np.flatnonzero(np.min(mat.H[:, lines], axis=1) > 0.5)


@dataclass
class EnvelopeViolation:
    rule: str
    n: int
    line: int      # 0-based, -1 for norm-level rules
    lhs: float
    rhs: float


def envelope_report(trace: RecoveryTrace, solution: OpfSolution,
                    grid: RadialGrid, mat: GridMatrices, eta: float,
                    tol: float = 1e-7) -> list[EnvelopeViolation]:
    """Check every iterate against the decay and ordering envelopes the
    contraction analysis promises (entrywise
    |delta f(n)| <= E^(n-1)|delta f(1)|, geometric eta-decay of the
    voltage and flow steps, iterates below the recorded upper bounds,
    and geometric decay of ||delta f(n)||)."""
    out: list[EnvelopeViolation] = []
    N = trace.n_iterations
    if N < 1:
        return out
    vals = solution.values
    b = grid.b
    v0 = grid.v0

    up_all = upstream_of_all(mat, strict_lines(trace, solution, grid))

    abs_df1 = np.abs(trace.f[1] - trace.f[0])
    abs_dv1 = np.abs(trace.v[1] - trace.v[0])
    abs_dP1 = np.abs(trace.P[1] - trace.P[0])
    df1_2 = trace.delta_f_2[0]
    normE = float(np.linalg.norm(mat.E, "fro"))

    env_f = abs_df1.copy()          # E^(n-1) |delta f(1)|
    fbar = vals["fbar"]
    Pbar = vals["Pbar"]
    Qbar_c = vals["Qbar"] + b * upstream(grid, vals["v"], v0)
    v_in = vals["v"]
    P_in = vals["P"]

    def note(rule, n, line, lhs, rhs):
        if lhs > rhs + tol:
            out.append(EnvelopeViolation(rule, n, line, float(lhs), float(rhs)))

    for n in range(1, N + 1):
        df = np.abs(trace.f[n] - trace.f[n - 1])
        dv = np.abs(trace.v[n] - trace.v[n - 1])
        dP = np.abs(trace.P[n] - trace.P[n - 1])
        decay = eta ** (n - 1)
        for l in range(grid.n_lines):
            note("step-f-matrix", n, l, df[l], env_f[l])
            note("step-v-geometric", n, l, dv[l], decay * abs_dv1[l])
            note("voltage-floor", n, l, v_in[l], trace.v[n][l])
            note("current-below-majorant", n, l, trace.f[n][l], fbar[l])
            note("flow-below-upper-P", n, l, trace.P[n][l], Pbar[l])
            note("flow-below-upper-Qc", n, l, trace.Qc[n][l], Qbar_c[l])
        for l in up_all:
            note("step-P-geometric", n, l, dP[l], decay * abs_dP1[l])
            note("flow-below-input-P", n, l, trace.P[n][l], P_in[l])
        note("norm-f-geometric", n, -1, trace.delta_f_2[n - 1],
             normE ** (n - 1) * df1_2)
        env_f = mat.E @ env_f
    return out


def strict_lines(trace: RecoveryTrace, solution: OpfSolution,
                 grid: RadialGrid, threshold: float = 1e-6) -> np.ndarray:
    from .opf import strict_set

    return strict_set(solution, grid, threshold)
