"""The price of bounding: how much feasible space the envelope gives up.

The augmented model enforces limits on the bounding system instead of
the physical quantities, so it is (slightly) conservative. To measure
by how much, a uniform generation ramp is grown until one cap binds on
the bound side, and the physical quantity is read at the same point:

  voltage mode   the voltage majorant reaches the upper band edge;
                 the oracle voltage sits a few millivolts (pu) lower
  ampacity mode  the envelope current reaches the rating; the oracle
                 current leaves a single-digit percentage unused

Run from the repository root:

    python3 demos/04_compression.py
"""

from radialopf import load_grid, quantify_compression


def main() -> None:
    for name in ("ieee34", "cigre_mv"):
        grid = load_grid(name)
        print(f"--- {name} "
              f"(ratings {grid.base.s_base_mva} MVA / "
              f"{grid.base.v_base_kv} kV) ---")
        for mode in ("voltage", "ampacity"):
            res = quantify_compression(grid, mode=mode)
            print(" ", res.summary())
            if mode == "voltage":
                print(f"    bound |V| = {res.bound_value:.6f}, "
                      f"oracle |V| = {res.physical_value:.6f}, "
                      f"gap {res.gap:.4f} pu")
            else:
                i_base = grid.base.i_base_a
                print(f"    bound |I| = {res.bound_value * i_base:.2f} A, "
                      f"oracle |I| = {res.physical_value * i_base:.2f} A, "
                      f"{res.gap_pct:.2f}% of the rating unused")
        print()


if __name__ == "__main__":
    main()
