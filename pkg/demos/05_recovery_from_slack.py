"""Extraction at work: repairing a relaxed point with genuine cone slack.

Solvers normally return (near-)exact points when the certificate holds,
so to exercise the machinery a feasible point with real slack is built
on purpose: the squared current of the leaf line is inflated by 0.05,
the flow and voltage equalities are re-solved around it, and the
bounding system is re-evaluated. The result satisfies every model row
with strict cone inequality, which is exactly the situation the
fixed-point extraction is for.

The things to watch:

  - the iterate steps shrink geometrically, at least as fast as the
    certificate's contraction factor promises;
  - the settled point matches the independent sweep oracle;
  - the feeder-head import strictly drops, because the slack point was
    burning phantom losses that the extraction removes.

Run from the repository root:

    python3 demos/05_recovery_from_slack.py
"""

import numpy as np

from radialopf import (
    build_ar_opf,
    build_matrices,
    check_all,
    envelope_report,
    exactness_gap,
    load_grid,
    recover,
    solve_model,
    verify_fixed_point,
    with_cone_slack,
)
from radialopf.bench import load_cost
from radialopf.opf import strict_set


def main() -> None:
    grid = load_grid("threebus")
    mat = build_matrices(grid)
    cost = load_cost("threebus", grid.n_lines)

    sol = solve_model(build_ar_opf(grid, cost=cost))
    print(f"exact optimum: objective {sol.objective:.4f}, "
          f"max gap {np.max(exactness_gap(sol, grid)):.1e}")

    pert = with_cone_slack(sol, grid, mat, amount=0.05, lines=[3])
    gaps = exactness_gap(pert, grid)
    print(f"after inflating f on line 3: gaps "
          f"{np.array2string(gaps, precision=4)}, strict set "
          f"{list(strict_set(pert, grid) + 1)}")

    trace = recover(pert, grid, mat)
    print(f"\niteration log (sup-norm of the current step):")
    for n, step in enumerate(trace.delta_f_inf, start=1):
        print(f"  n = {n:2d}  |df| = {step:.3e}")

    rep = verify_fixed_point(trace, pert, grid)
    print(f"\noracle deviation       {rep.oracle_max_dev:.2e}")
    print(f"flow-equation residual {rep.eq_residual:.2e}")
    print(f"import decrease        {rep.import_decrease:.6f} pu "
          f"(strict: {rep.import_strictly_lower})")

    env = envelope_report(trace, pert, grid, mat, eta=check_all(grid).eta)
    print(f"envelope violations    {len(env)}")
    assert rep.ok and not env
    print("\nevery promised envelope held; the repaired point is physical")


if __name__ == "__main__":
    main()
