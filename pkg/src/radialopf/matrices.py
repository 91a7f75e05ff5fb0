"""Dense matrix machinery for the branch-flow model on a radial feeder.

Everything is L x L over lines (equivalently buses, since line l ends at
bus l). The central objects:

    G       downstream adjacency
    H       reachability closure (I - G)^-1
    B       per-bus accumulated shunt: B_l = b_l + sum of b_m over child lines m
    M       2 diag(x) H diag(B), the shunt coupling of the voltage recursion
    C       (I - G^T - M)^-1, the voltage propagation inverse
    D       sensitivity of squared voltage to squared currents: v = vbar - D f
    F       sensitivity of corrected reactive flow to f: Qc = Qc_hat + F f
    E       contraction matrix of the flow fixed-point map
    pi, rho, theta   flow-magnitude bound vectors entering E

All products are dense; feeders of interest are tens of lines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import RadialGrid, adjacency, closure

__all__ = [
    "OperatingBounds",
    "GridMatrices",
    "bounds_from_rule",
    "build_matrices",
    "vbar_linear",
]

# per-line flow caps are floored at this value so bound vectors stay
# meaningful on grids whose flows are all reverse (pure injection)
FLOW_CAP_FLOOR = 0.05


@dataclass
class OperatingBounds:
    """Per-line caps on the auxiliary top flows (upper rows of the
    technical constraints) and, through pi/rho, on the contraction
    estimates. Positive, per unit."""

    p_line_max: np.ndarray
    q_line_max: np.ndarray

    def validate(self, n_lines: int) -> None:
        if len(self.p_line_max) != n_lines or len(self.q_line_max) != n_lines:
            raise ValueError("bound vectors must have one entry per line")
        if np.any(self.p_line_max <= 0) or np.any(self.q_line_max <= 0):
            raise ValueError("flow caps must be positive")


def bounds_from_rule(grid: RadialGrid, rule: str = "pct110", margin: float = 1.1,
                     floor: float = FLOW_CAP_FLOOR) -> OperatingBounds:
    """Build per-line flow caps from grid data.

    rule "pct110": cap each line at margin (default 110%) of the total
    downstream consumption bound, the usual planning shortcut.

    rule "loadflow": run the load-flow oracle at the two box corners
    (max consumption and max injection) and cap at margin times the
    largest top-flow seen, so the caps never cut into the operating
    range actually reachable.
    """
    H = closure(grid)
    if rule == "pct110":
        p_cap = margin * (H @ np.clip(grid.p_max, 0.0, None))
        q_cap = margin * (H @ np.clip(grid.q_max, 0.0, None))
    elif rule == "loadflow":
        from .loadflow import solve_loadflow

        corners = [
            grid.p_max + 1j * grid.q_max,
            grid.p_min + 1j * grid.q_min,
        ]
        p_cap = np.zeros(grid.n_lines)
        q_cap = np.zeros(grid.n_lines)
        for s in corners:
            lf = solve_loadflow(grid, s)
            p_cap = np.maximum(p_cap, margin * lf.S_top.real)
            q_cap = np.maximum(q_cap, margin * lf.S_top.imag)
    else:
        raise ValueError(f"unknown bound rule {rule!r}")
    bounds = OperatingBounds(
        p_line_max=np.maximum(p_cap, floor),
        q_line_max=np.maximum(q_cap, floor),
    )
    bounds.validate(grid.n_lines)
    return bounds


@dataclass
class GridMatrices:
    grid: RadialGrid
    bounds: OperatingBounds
    G: np.ndarray
    H: np.ndarray
    B: np.ndarray
    M: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray
    E: np.ndarray
    pi: np.ndarray
    rho: np.ndarray
    theta: np.ndarray

    @property
    def Hr(self) -> np.ndarray:
        """H diag(r): sensitivity of top active flows to f."""
        return self.H * self.grid.r[np.newaxis, :]


def build_matrices(grid: RadialGrid, bounds: OperatingBounds | None = None,
                   rule: str = "pct110") -> GridMatrices:
    """Assemble every matrix and bound vector for one grid and one set of
    operating bounds (built from `rule` when not supplied)."""
    if bounds is None:
        bounds = bounds_from_rule(grid, rule=rule)
    bounds.validate(grid.n_lines)

    L = grid.n_lines
    r, x, b = grid.r, grid.x, grid.b
    G = adjacency(grid)
    H = closure(grid)
    eye = np.eye(L)

    # accumulated shunt per bus: own bottom end plus the top ends of children
    B = b + G @ b

    M = 2.0 * x[:, None] * (H * B[None, :])
    C = np.linalg.solve(eye - G.T - M, eye)

    zsq = r * r + x * x
    core = (2.0 * r[:, None] * ((H - eye) * r[None, :])
            + 2.0 * x[:, None] * ((H - eye) * x[None, :])
            + np.diag(zsq))
    D = C @ core

    F = H * x[None, :] + (H * B[None, :]) @ D

    # worst-case flow magnitudes, normalized by the lowest admissible
    # squared voltage
    Hp_min = H @ grid.p_min
    pi = np.maximum(bounds.p_line_max, np.abs(Hp_min)) / grid.v_min

    # reactive worst case: consumption side includes the local shunt at
    # the voltage cap, injection side includes the full charging of the
    # downstream subtree at the voltage cap
    charge = H @ (b * ((eye + G.T) @ np.full(L, grid.v_max)))
    Hq_min = H @ grid.q_min
    rho = np.maximum(bounds.q_line_max + b * grid.v_max,
                     np.abs(Hq_min - charge)) / grid.v_min

    theta = pi * pi + rho * rho

    E = (2.0 * pi[:, None] * (H * r[None, :])
         + 2.0 * rho[:, None] * F
         + theta[:, None] * D)

    return GridMatrices(grid=grid, bounds=bounds, G=G, H=H, B=B, M=M, C=C,
                        D=D, F=F, E=E, pi=pi, rho=rho, theta=theta)


def vbar_linear(mat: GridMatrices, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Upper squared-voltage profile for fixed injections.

    Solves the loss-free voltage recursion in closed form:
    vbar = C (v0 e1 - 2 diag(r) H p - 2 diag(x) H q), where e1 is the
    slack column indicator (the constant enters only through line 1).
    """
    grid = mat.grid
    L = grid.n_lines
    e1 = np.zeros(L)
    e1[0] = 1.0
    rhs = grid.v0 * e1 - 2.0 * grid.r * (mat.H @ p) - 2.0 * grid.x * (mat.H @ q)
    return mat.C @ rhs
