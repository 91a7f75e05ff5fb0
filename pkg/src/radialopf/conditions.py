"""Certification of the exactness conditions for the augmented relaxation.

Five checks over the grid matrices, all parameter-only (no solve):

    C1  ||H^T M||_F < 1        voltage recursion is a contraction
    C2  ||E||_F < 1            flow fixed-point map is a contraction
    C3  D E  <= eta5 D         entrywise, eta5 < 1/2
    C4  (H diag(r) E) o H <= eta1 H diag(r)   entrywise on the tree
                                support, eta1 < 1/2
    C5  H diag(r) E E <= eta2 H diag(r) E     entrywise, eta2 < 1/2

The entrywise ratios ignore structural zeros: entries of the right-hand
side below 1e-12 times its largest magnitude count as zero, and a
nonzero left-hand entry over a zero right-hand entry drives the ratio
to +inf.

The Frobenius norm dominates the induced 2-norm, so a pass on C1/C2
certifies the 2-norm contraction the recovery iteration relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .matrices import GridMatrices, OperatingBounds, build_matrices
from .network import RadialGrid

__all__ = ["ConditionReport", "ratio_condition", "check_all", "ETA_LIMIT"]

ETA_LIMIT = 0.5
NORM_LIMIT = 1.0
STRUCTURAL_TOL = 1e-12


def ratio_condition(lhs: np.ndarray, rhs: np.ndarray) -> float:
    """Smallest eta with lhs <= eta * rhs entrywise, ignoring structural
    zeros of rhs; +inf when no finite eta exists."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if lhs.shape != rhs.shape:
        raise ValueError("shape mismatch")
    tol = STRUCTURAL_TOL * max(np.max(np.abs(rhs)), 1e-300)
    lhs = np.where(np.abs(lhs) <= tol, 0.0, lhs)
    valid = rhs > tol
    if np.any(lhs[~valid] > 0.0):
        return math.inf
    if not np.any(valid):
        return 0.0
    return float(np.max(np.maximum(lhs[valid], 0.0) / rhs[valid]))


@dataclass
class ConditionReport:
    c1_norm: float
    c2_norm: float
    eta5: float  # C3
    eta1: float  # C4
    eta2: float  # C5
    scale: float = 1.0

    @property
    def eta(self) -> float:
        """Contraction rate used by the recovery envelopes."""
        return max(self.eta1, self.eta2, self.eta5)

    def failed(self) -> list[str]:
        out = []
        if not self.c1_norm < NORM_LIMIT:
            out.append("C1")
        if not self.c2_norm < NORM_LIMIT:
            out.append("C2")
        if not self.eta5 < ETA_LIMIT:
            out.append("C3")
        if not self.eta1 < ETA_LIMIT:
            out.append("C4")
        if not self.eta2 < ETA_LIMIT:
            out.append("C5")
        return out

    @property
    def holds(self) -> bool:
        return not self.failed()

    def summary(self) -> str:
        rows = [
            ("C1", "||H'M||", self.c1_norm, NORM_LIMIT),
            ("C2", "||E||", self.c2_norm, NORM_LIMIT),
            ("C3", "eta5", self.eta5, ETA_LIMIT),
            ("C4", "eta1", self.eta1, ETA_LIMIT),
            ("C5", "eta2", self.eta2, ETA_LIMIT),
        ]
        lines = []
        for name, label, val, lim in rows:
            ok = "ok " if val < lim else "FAIL"
            lines.append(f"{name}  {label:<10} = {val: .6f}  (< {lim})  {ok}")
        verdict = "all conditions hold" if self.holds else \
            "violated: " + ", ".join(self.failed())
        lines.append(verdict)
        return "\n".join(lines)


def check_all(grid: RadialGrid, bounds: OperatingBounds | None = None,
              rule: str = "pct110", mat: GridMatrices | None = None) -> ConditionReport:
    """Evaluate C1..C5 for one grid and bound set."""
    if mat is None:
        mat = build_matrices(grid, bounds=bounds, rule=rule)
    Hr = mat.Hr
    HrE = Hr @ mat.E
    return ConditionReport(
        c1_norm=float(np.linalg.norm(mat.H.T @ mat.M, "fro")),
        c2_norm=float(np.linalg.norm(mat.E, "fro")),
        eta5=ratio_condition(mat.D @ mat.E, mat.D),
        eta1=ratio_condition(HrE * (mat.H > 0), Hr),
        eta2=ratio_condition(HrE @ mat.E, HrE),
    )
