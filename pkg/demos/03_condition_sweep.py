"""How much generation the certificate tolerates on two public feeders.

The injection floors (the generation side of every bus envelope) are
scaled by a common factor k and each of the five conditions is
bisected for its own failure threshold. On both feeders the
entry-wise current-vs-voltage condition (C3) is the first to go; the
headline numbers are the power production at that point and the
highest voltage the bounding system certifies there.

Run from the repository root:

    python3 demos/03_condition_sweep.py
"""

from radialopf import check_all, load_grid, sweep_conditions
from radialopf.bench import with_pmin_scale


def main() -> None:
    for name in ("ieee34", "cigre_mv"):
        grid = load_grid(name)
        res = sweep_conditions(grid)
        print(res.summary())

        # the sweep is reproducible point by point with the standalone
        # checker; show the report right at the boundary
        just_past = with_pmin_scale(grid, res.k_star * 1.001)
        rep = check_all(just_past)
        print(f"  just past the threshold (k = {res.k_star * 1.001:.4f}): "
              f"holds = {rep.holds}, failed = {rep.failed()}")
        print()


if __name__ == "__main__":
    main()
