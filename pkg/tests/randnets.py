"""Randomized radial feeders for the property suite.

Grids are drawn directly in per-unit with parameters in the range of
mid-size cable feeders, then filtered: a draw is kept only when the
five certificate conditions hold and the augmented model solves to
optimality. Rejection keeps the accepted set honest (no hand-tuning
toward the properties under test) while the fixed seed sequence keeps
every run identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from radialopf import (
    Bus,
    ConditionReport,
    CostModel,
    GridMatrices,
    Line,
    OpfSolution,
    PerUnitBase,
    RadialGrid,
    ValidationError,
    build_ar_opf,
    build_matrices,
    check_all,
    envelope_report,
    recover,
    solve_model,
    verify_fixed_point,
    with_cone_slack,
)
from radialopf.recovery import FixedPointReport, RecoveryTrace

BATCH_SEED = 20260816
MAX_LINES = 15


def random_grid(rng: np.random.Generator, name: str = "rand") -> RadialGrid:
    """One random tree with 4..15 lines.

    Parent choice mixes chain extension with uniform attachment so the
    set contains both deep and bushy feeders. Shunts, impedances and
    ratings are drawn wide enough that a fair share of draws violate
    the certificate conditions; the caller filters.
    """
    L = int(rng.integers(4, MAX_LINES + 1))
    lines = []
    for l in range(1, L + 1):
        if l == 1:
            up = 0
        elif rng.random() < 0.5:
            up = l - 1
        else:
            up = int(rng.integers(1, l))
        imax = rng.uniform(0.9, 1.4)
        lines.append(Line(id=l, up=up,
                          r=float(rng.uniform(0.004, 0.02)),
                          x=float(rng.uniform(0.004, 0.02)),
                          b=float(rng.uniform(0.01, 0.08)),
                          i_max_sq=float(imax * imax)))
    buses = []
    for i in range(1, L + 1):
        load = float(rng.uniform(0.0, 0.08))
        gen = float(rng.uniform(0.05, 0.25)) if rng.random() < 0.5 else 0.0
        buses.append(Bus(id=i, p_min=load - gen, p_max=load,
                         q_min=-float(rng.uniform(0.0, 0.06)),
                         q_max=float(rng.uniform(0.0, 0.06))))
    grid = RadialGrid(base=PerUnitBase(5.0, 24.9), v0=1.0, v_min=0.81,
                      v_max=1.1025, buses=buses, lines=lines, name=name)
    grid.validate()
    return grid


def random_cost(rng: np.random.Generator, n_buses: int) -> CostModel:
    """Mixed-sign linear terms so the optima land in varied corners,
    with an occasional quadratic block."""
    cost = CostModel.import_only(n_buses, slope=float(rng.uniform(80, 200)))
    cost.p_lin = rng.uniform(-100, 100, n_buses).round(3)
    cost.q_lin = rng.uniform(-20, 20, n_buses).round(3)
    if rng.random() < 0.3:
        mask = rng.random(n_buses) < 0.4
        cost.p_quad = np.where(mask, rng.uniform(0, 50, n_buses), 0.0).round(3)
    cost.validate(n_buses)
    return cost


@dataclass
class RandomCase:
    seed: int
    grid: RadialGrid
    mat: GridMatrices
    report: ConditionReport
    cost: CostModel
    solution: OpfSolution


def make_case(seed: int) -> RandomCase | None:
    """Draw one feeder; None when the certificate fails or the solver
    does not reach an optimum."""
    rng = np.random.default_rng(seed)
    grid = random_grid(rng, name=f"rand{seed}")
    report = check_all(grid)
    if not (report.holds and report.eta < 0.5):
        return None
    mat = build_matrices(grid)
    cost = random_cost(rng, grid.n_lines)
    sol = solve_model(build_ar_opf(grid, bounds=mat.bounds, cost=cost))
    if sol.status != "optimal":
        return None
    return RandomCase(seed, grid, mat, report, cost, sol)


def conditioned_batch(n: int = 50, seed0: int = BATCH_SEED) -> list[RandomCase]:
    out: list[RandomCase] = []
    seed = seed0
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 40 + 10 * n:
            raise RuntimeError("random feeder acceptance rate collapsed; "
                               f"{len(out)} of {n} after {attempts} draws")
        case = make_case(seed)
        seed += 1
        if case is not None:
            out.append(case)
    return out


@dataclass
class RecoveryRun:
    case: RandomCase
    perturbed: OpfSolution
    amount: float
    line: int          # 1-based line carrying the injected cone slack
    trace: RecoveryTrace
    report: FixedPointReport
    envelope: list


def perturb_and_recover(case: RandomCase, start: float = 0.02,
                        floor: float = 1e-5) -> RecoveryRun:
    """Inflate the squared current on the deepest line of the optimum,
    then run the extraction map and both verifiers on the result.

    The inflation amount halves until the perturbed point stays inside
    the feasible set; on these draws the first try always fits, the
    ladder is only a guard.
    """
    depth = case.mat.H.sum(axis=0)
    line = int(np.argmax(depth)) + 1
    amount = start
    while True:
        try:
            pert = with_cone_slack(case.solution, case.grid, case.mat,
                                   amount, lines=[line])
            break
        except ValidationError:
            amount *= 0.5
            if amount < floor:
                raise
    trace = recover(pert, case.grid, case.mat)
    report = verify_fixed_point(trace, pert, case.grid)
    env = envelope_report(trace, pert, case.grid, case.mat,
                          eta=case.report.eta)
    return RecoveryRun(case, pert, amount, line, trace, report, env)
