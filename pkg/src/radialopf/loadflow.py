"""Load-flow oracle for radial feeders with pi-model lines.

A plain backward/forward sweep, independent of the convex machinery, so
it can arbitrate whether any candidate operating point is an actual
solution of the nonlinear power-flow equations:

    top flow      S_t[l] = S_b[l] + z[l] f[l] - 1j (v_up + v[l]) b[l]
    bottom flow   S_b[l] = s[l] + sum of S_t over child lines
    central       f[l]   = |S_b[l] - 1j v[l] b[l]|^2 / v[l]
                         = |S_t[l] + 1j v_up b[l]|^2 / v_up
    voltage       v[l]   = v_up - 2 Re(conj(z[l]) (S_t[l] + 1j v_up b[l]))
                           + |z[l]|^2 f[l]

Sign convention: positive injection components mean consumption, so a
generating bus has negative real injection. The sweep starts from a
flat profile at the slack voltage and returns the high-voltage
(practical) branch of the solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import RadialGrid

__all__ = [
    "LoadFlowError",
    "LoadFlowResult",
    "solve_loadflow",
    "prescribed_current_state",
    "residuals",
    "terminal_currents",
    "check_operational",
]


class LoadFlowError(Exception):
    """Sweep failed: no convergence or voltage collapse."""


@dataclass
class LoadFlowResult:
    s: np.ndarray       # complex injections per bus
    S_top: np.ndarray   # complex top (slack-side) flow per line
    S_bot: np.ndarray   # complex bottom flow per line
    v: np.ndarray       # squared voltage magnitude per bus
    f: np.ndarray       # squared central-element current per line
    iterations: int
    residual: float

    def v_up(self, grid: RadialGrid) -> np.ndarray:
        """Squared voltage at the upstream end of every line."""
        up = grid.up
        out = np.where(up == 0, grid.v0, 0.0)
        mask = up > 0
        out[mask] = self.v[up[mask] - 1]
        return out


def _sweep_order(grid: RadialGrid):
    # labels are topological (up(l) < l), so plain index order works
    forward = range(grid.n_lines)
    backward = range(grid.n_lines - 1, -1, -1)
    return forward, backward


def residuals(grid: RadialGrid, s, S_top, S_bot, v, f) -> float:
    """Largest absolute defect of the power-flow equations at a candidate
    point, checking all four equation families."""
    up = grid.up
    z, b = grid.z, grid.b
    v_up = np.where(up == 0, grid.v0, v[np.maximum(up - 1, 0)])
    child_sum = np.zeros(grid.n_lines, dtype=complex)
    for j, parent in enumerate(up):
        if parent >= 1:
            child_sum[parent - 1] += S_top[j]
    res_bot = S_bot - (s + child_sum)
    res_top = S_top - (S_bot + z * f - 1j * (v_up + v) * b)
    res_v = v - (v_up - 2.0 * (np.conj(z) * (S_top + 1j * v_up * b)).real
                 + np.abs(z) ** 2 * f)
    res_f_top = f - np.abs(S_top + 1j * v_up * b) ** 2 / v_up
    res_f_bot = f - np.abs(S_bot - 1j * v * b) ** 2 / v
    return float(max(np.max(np.abs(res_bot)), np.max(np.abs(res_top)),
                     np.max(np.abs(res_v)), np.max(np.abs(res_f_top)),
                     np.max(np.abs(res_f_bot))))


def solve_loadflow(grid: RadialGrid, s, v0: float | None = None,
                   tol: float = 1e-10, max_iter: int = 500) -> LoadFlowResult:
    """Backward/forward sweep from a flat start.

    s: complex injections per bus (positive = consumption). Raises
    LoadFlowError on divergence or voltage collapse.
    """
    L = grid.n_lines
    s = np.asarray(s, dtype=complex)
    if s.shape != (L,):
        raise ValueError(f"expected {L} complex injections")
    v0 = grid.v0 if v0 is None else v0
    up = grid.up
    z, b = grid.z, grid.b
    zsq = np.abs(z) ** 2

    v = np.full(L, v0, dtype=float)
    S_top = np.zeros(L, dtype=complex)
    S_bot = np.zeros(L, dtype=complex)
    f = np.zeros(L)

    _, backward = _sweep_order(grid)
    res = np.inf
    grew = 0
    for it in range(1, max_iter + 1):
        # backward: aggregate flows leaf-to-root with current voltages
        for l in backward:
            acc = s[l]
            # children have larger indices, already done in this pass
            for m in range(l + 1, L):
                if up[m] == l + 1:
                    acc += S_top[m]
            S_bot[l] = acc
            f[l] = abs(S_bot[l] - 1j * v[l] * b[l]) ** 2 / v[l]
            v_up = v0 if up[l] == 0 else v[up[l] - 1]
            S_top[l] = S_bot[l] + z[l] * f[l] - 1j * (v_up + v[l]) * b[l]
        # forward: propagate voltages root-to-leaf
        for l in range(L):
            v_up = v0 if up[l] == 0 else v[up[l] - 1]
            v[l] = (v_up - 2.0 * (np.conj(z[l]) * (S_top[l] + 1j * v_up * b[l])).real
                    + zsq[l] * f[l])
            if v[l] <= 0.0:
                raise LoadFlowError(f"voltage collapse at bus {l + 1}")
        new_res = residuals(grid, s, S_top, S_bot, v, f)
        if new_res <= tol:
            return LoadFlowResult(s=s, S_top=S_top.copy(), S_bot=S_bot.copy(),
                                  v=v.copy(), f=f.copy(), iterations=it,
                                  residual=new_res)
        grew = grew + 1 if new_res > res else 0
        if grew >= 10:
            raise LoadFlowError(f"sweep diverging after {it} iterations")
        res = new_res
    raise LoadFlowError(f"no convergence in {max_iter} iterations "
                        f"(residual {res:.2e})")


def prescribed_current_state(grid: RadialGrid, s, f, v0: float | None = None,
                             tol: float = 1e-12,
                             max_iter: int = 200) -> LoadFlowResult:
    """Sweep with the squared central current frozen at `f` instead of
    recomputed from the flows.

    The flow and voltage equations are linear once f is fixed, so this
    settles in a few passes. When f exceeds the physical current of the
    resulting state the point satisfies the relaxed equations with cone
    slack; the reported residual covers only the linear families, the
    current-definition defect is exactly that slack.
    """
    L = grid.n_lines
    s = np.asarray(s, dtype=complex)
    f = np.asarray(f, dtype=float)
    if s.shape != (L,) or f.shape != (L,):
        raise ValueError(f"expected {L} injections and {L} currents")
    v0 = grid.v0 if v0 is None else v0
    up = grid.up
    z, b = grid.z, grid.b
    zsq = np.abs(z) ** 2

    v = np.full(L, v0, dtype=float)
    S_top = np.zeros(L, dtype=complex)
    S_bot = np.zeros(L, dtype=complex)
    _, backward = _sweep_order(grid)

    def linear_residual() -> float:
        v_up = np.where(up == 0, v0, v[np.maximum(up - 1, 0)])
        child_sum = np.zeros(L, dtype=complex)
        for j, parent in enumerate(up):
            if parent >= 1:
                child_sum[parent - 1] += S_top[j]
        res_bot = S_bot - (s + child_sum)
        res_top = S_top - (S_bot + z * f - 1j * (v_up + v) * b)
        res_v = v - (v_up - 2.0 * (np.conj(z) * (S_top + 1j * v_up * b)).real
                     + zsq * f)
        return float(max(np.max(np.abs(res_bot)), np.max(np.abs(res_top)),
                         np.max(np.abs(res_v))))

    for it in range(1, max_iter + 1):
        for l in backward:
            acc = s[l]
            for m in range(l + 1, L):
                if up[m] == l + 1:
                    acc += S_top[m]
            S_bot[l] = acc
            v_up = v0 if up[l] == 0 else v[up[l] - 1]
            S_top[l] = S_bot[l] + z[l] * f[l] - 1j * (v_up + v[l]) * b[l]
        for l in range(L):
            v_up = v0 if up[l] == 0 else v[up[l] - 1]
            v[l] = (v_up - 2.0 * (np.conj(z[l]) * (S_top[l] + 1j * v_up * b[l])).real
                    + zsq[l] * f[l])
            if v[l] <= 0.0:
                raise LoadFlowError(f"voltage collapse at bus {l + 1}")
        res = linear_residual()
        if res <= tol:
            return LoadFlowResult(s=s, S_top=S_top.copy(), S_bot=S_bot.copy(),
                                  v=v.copy(), f=f.copy(), iterations=it,
                                  residual=res)
    raise LoadFlowError(f"no convergence in {max_iter} iterations "
                        f"(residual {res:.2e})")


def terminal_currents(grid: RadialGrid, lf: LoadFlowResult):
    """Squared terminal current magnitudes (top, bottom) per line, per
    unit. These are the quantities the ampacity limits constrain."""
    v_up = lf.v_up(grid)
    i_top_sq = np.abs(lf.S_top) ** 2 / v_up
    i_bot_sq = np.abs(lf.S_bot) ** 2 / lf.v
    return i_top_sq, i_bot_sq


def check_operational(grid: RadialGrid, lf: LoadFlowResult,
                      tol: float = 1e-9) -> list[tuple[str, int, float]]:
    """Violations of the physical operating limits at a load-flow point.

    Returns (kind, 1-based index, excess) triples; excess is in the
    natural squared unit of each limit.
    """
    out: list[tuple[str, int, float]] = []
    for l, val in enumerate(lf.v):
        if val < grid.v_min - tol:
            out.append(("v_min", l + 1, float(grid.v_min - val)))
        if val > grid.v_max + tol:
            out.append(("v_max", l + 1, float(val - grid.v_max)))
    i_top_sq, i_bot_sq = terminal_currents(grid, lf)
    cap = grid.i_max_sq
    for l in range(grid.n_lines):
        if i_top_sq[l] > cap[l] + tol:
            out.append(("ampacity_top", l + 1, float(i_top_sq[l] - cap[l])))
        if i_bot_sq[l] > cap[l] + tol:
            out.append(("ampacity_bottom", l + 1, float(i_bot_sq[l] - cap[l])))
    return out
