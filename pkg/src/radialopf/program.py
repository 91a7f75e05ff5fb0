"""Small conic-program container and solver binding.

The optimization models are assembled into a solver-agnostic container:
flat variable vector, linear equality and inequality rows, rotated
second-order-cone blocks, and an affine objective. Every row and cone
carries a short tag naming the model constraint it encodes, which keeps
solver output and infeasibility reports readable.

One native backend is provided through cvxpy (Clarabel interior-point
by default, SCS as fallback), plus a JSON serializer so the same
program can be handed to an external solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = ["LinExpr", "ConicProgram", "ProgramResult"]


class LinExpr:
    """Sparse affine expression: sum of coef * x[i] plus a constant."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: dict[int, float] | None = None, const: float = 0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def constant(c: float) -> "LinExpr":
        return LinExpr(None, c)

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def _iadd(self, other, sign: float) -> "LinExpr":
        if isinstance(other, LinExpr):
            for i, c in other.terms.items():
                self.terms[i] = self.terms.get(i, 0.0) + sign * c
            self.const += sign * other.const
        else:
            self.const += sign * float(other)
        return self

    def __add__(self, other):
        return self.copy()._iadd(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self.copy()._iadd(other, -1.0)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, k):
        k = float(k)
        return LinExpr({i: c * k for i, c in self.terms.items()}, self.const * k)

    __rmul__ = __mul__

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(c * x[i] for i, c in self.terms.items())


@dataclass
class VarBlock:
    name: str
    start: int
    size: int

    def __getitem__(self, i: int) -> LinExpr:
        if not (0 <= i < self.size):
            raise IndexError(f"{self.name}[{i}] out of range {self.size}")
        return LinExpr({self.start + i: 1.0})

    def indices(self) -> range:
        return range(self.start, self.start + self.size)


@dataclass
class ProgramResult:
    status: str                  # optimal / infeasible / unbounded / numerical-failure
    objective: float
    x: np.ndarray | None
    eq_residual: float
    ineq_residual: float
    cone_residual: float
    solver: str
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class ConicProgram:
    """Minimize an affine objective over linear rows and rotated cones.

    Rows are stored in homogeneous form: eq rows expr == 0, le rows
    expr <= 0, cones ||vec||^2 <= t * u with t, u >= 0 implied.
    """

    def __init__(self):
        self.n = 0
        self.blocks: dict[str, VarBlock] = {}
        self.eq_rows: list[tuple[LinExpr, str]] = []
        self.le_rows: list[tuple[LinExpr, str]] = []
        self.rsoc_blocks: list[tuple[list[LinExpr], LinExpr, LinExpr, str]] = []
        self.objective: LinExpr = LinExpr()

    # ---- construction ----------------------------------------------------

    def add_block(self, name: str, size: int) -> VarBlock:
        if name in self.blocks:
            raise ValueError(f"duplicate variable block {name!r}")
        blk = VarBlock(name, self.n, size)
        self.blocks[name] = blk
        self.n += size
        return blk

    def add_eq(self, expr: LinExpr, tag: str) -> None:
        self.eq_rows.append((expr, tag))

    def add_le(self, expr: LinExpr, tag: str) -> None:
        """expr <= 0"""
        self.le_rows.append((expr, tag))

    def add_range(self, expr: LinExpr, lo: float, hi: float, tag: str) -> None:
        if lo == hi:
            self.add_eq(expr - lo, tag)
            return
        if lo > hi:
            raise ValueError(f"empty range for {tag}")
        if np.isfinite(hi):
            self.add_le(expr - hi, tag + ".hi")
        if np.isfinite(lo):
            self.add_le(lo - expr, tag + ".lo")

    def add_rsoc(self, vec: list[LinExpr], t: LinExpr, u: LinExpr, tag: str) -> None:
        """||vec||^2 <= t * u (t, u nonnegative by the cone itself)."""
        self.rsoc_blocks.append((list(vec), t, u, tag))

    def set_objective(self, expr: LinExpr) -> None:
        self.objective = expr

    # ---- evaluation ------------------------------------------------------

    def _rows_matrix(self, rows) -> tuple[sp.csr_matrix, np.ndarray]:
        data, ri, ci = [], [], []
        consts = np.zeros(len(rows))
        for k, (expr, _tag) in enumerate(rows):
            consts[k] = expr.const
            for i, c in expr.terms.items():
                ri.append(k)
                ci.append(i)
                data.append(c)
        A = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), self.n))
        return A, consts

    def residuals(self, x: np.ndarray) -> tuple[float, float, float]:
        eq_res = ineq_res = cone_res = 0.0
        if self.eq_rows:
            A, b = self._rows_matrix(self.eq_rows)
            eq_res = float(np.max(np.abs(A @ x + b), initial=0.0))
        if self.le_rows:
            A, b = self._rows_matrix(self.le_rows)
            ineq_res = float(np.max(A @ x + b, initial=0.0))
        for vec, t, u, _tag in self.rsoc_blocks:
            tv, uv = t.value(x), u.value(x)
            norm_sq = sum(e.value(x) ** 2 for e in vec)
            cone_res = max(cone_res, norm_sq - tv * uv, -tv, -uv)
        return eq_res, ineq_res, max(cone_res, 0.0)

    # ---- serialization ---------------------------------------------------

    @staticmethod
    def _expr_json(expr: LinExpr):
        return {"terms": sorted(expr.terms.items()), "const": expr.const}

    def to_json(self, indent: int | None = None) -> str:
        doc = {
            "n_vars": self.n,
            "blocks": [{"name": b.name, "start": b.start, "size": b.size}
                       for b in self.blocks.values()],
            "minimize": self._expr_json(self.objective),
            "eq": [{"tag": tag, **self._expr_json(e)} for e, tag in self.eq_rows],
            "le": [{"tag": tag, **self._expr_json(e)} for e, tag in self.le_rows],
            "rsoc": [{"tag": tag,
                      "t": self._expr_json(t),
                      "u": self._expr_json(u),
                      "vec": [self._expr_json(e) for e in vec]}
                     for vec, t, u, tag in self.rsoc_blocks],
        }
        return json.dumps(doc, indent=indent)

    # ---- solving ---------------------------------------------------------

    def solve(self, solver: str = "clarabel", feas_tol: float = 1e-8,
              gap_tol: float = 1e-8, fallback: bool = True,
              verbose: bool = False) -> ProgramResult:
        """Solve through cvxpy. Never raises on solver trouble; failures
        come back as status "numerical-failure"."""
        import cvxpy as cp

        x = cp.Variable(self.n)
        cons = []
        if self.eq_rows:
            A, b = self._rows_matrix(self.eq_rows)
            cons.append(A @ x + b == 0)
        if self.le_rows:
            A, b = self._rows_matrix(self.le_rows)
            cons.append(A @ x + b <= 0)
        def scalar(expr: LinExpr):
            if not expr.terms:
                return expr.const
            row = sp.csr_matrix(
                (list(expr.terms.values()),
                 ([0] * len(expr.terms), list(expr.terms.keys()))),
                shape=(1, self.n))
            return (row @ x)[0] + expr.const

        for vec, t, u, _tag in self.rsoc_blocks:
            # ||w||^2 <= t*u  <=>  ||(2w, t-u)|| <= t+u
            rows = [e * 2.0 for e in vec] + [t - u]
            data, ri, ci = [], [], []
            consts = np.zeros(len(rows))
            for k, e in enumerate(rows):
                consts[k] = e.const
                for i, c in e.terms.items():
                    ri.append(k)
                    ci.append(i)
                    data.append(c)
            A = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), self.n))
            cons.append(cp.SOC(scalar(t + u), A @ x + consts))

        prob = cp.Problem(cp.Minimize(scalar(self.objective)), cons)

        attempts = [solver] + (["scs"] if fallback and solver != "scs" else [])
        last_msg = ""
        for name in attempts:
            try:
                if name == "clarabel":
                    prob.solve(solver=cp.CLARABEL, verbose=verbose,
                               tol_feas=feas_tol * 1e-1,
                               tol_gap_abs=gap_tol * 1e-1,
                               tol_gap_rel=gap_tol * 1e-1)
                elif name == "scs":
                    prob.solve(solver=cp.SCS, verbose=verbose, eps=1e-9,
                               max_iters=200_000)
                else:
                    prob.solve(solver=name.upper(), verbose=verbose)
            except cp.error.SolverError as exc:
                last_msg = f"{name}: {exc}"
                continue
            status = prob.status or "none"
            if status in ("infeasible", "infeasible_inaccurate"):
                return ProgramResult("infeasible", np.nan, None, np.nan, np.nan,
                                     np.nan, name, status)
            if status in ("unbounded", "unbounded_inaccurate"):
                return ProgramResult("unbounded", np.nan, None, np.nan, np.nan,
                                     np.nan, name, status)
            if status in ("optimal", "optimal_inaccurate") and x.value is not None:
                xv = np.asarray(x.value, dtype=float)
                eq_res, ineq_res, cone_res = self.residuals(xv)
                worst = max(eq_res, ineq_res, cone_res)
                if status == "optimal" or worst <= feas_tol:
                    return ProgramResult("optimal", float(self.objective.value(xv)),
                                         xv, eq_res, ineq_res, cone_res, name,
                                         status)
                last_msg = f"{name}: {status}, residual {worst:.2e}"
                continue
            last_msg = f"{name}: {status}"
        return ProgramResult("numerical-failure", np.nan, None, np.nan, np.nan,
                             np.nan, attempts[-1], last_msg)
