"""Command-line front end.

One subcommand per workflow step:

    check-conditions  certificate report for a grid (text, optional CSV)
    matrices dump     write every operator matrix as CSV
    loadflow          run the sweep oracle on given injections, or
                      cross-check a solution file against it
    solve             build and solve the relaxed or augmented model,
                      write a solution file
    recover           extract a physical point from a solution file
    bench             the three bundled studies (threebus comparison,
                      condition sweep, compression measurement)

Grids are bundled names (threebus, ieee34, cigre_mv) or file paths.
All CSV output goes to the path given, with "-" meaning stdout.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    _ramp_point,
    load_cost,
    quantify_compression,
    run_threebus_comparison,
    sweep_conditions,
    with_pmin_scale,
)
from .conditions import check_all
from .loadflow import (
    LoadFlowError,
    check_operational,
    solve_loadflow,
    terminal_currents,
)
from .matrices import build_matrices, vbar_linear
from .network import GridError, RadialGrid, load_grid, upstream
from .opf import (
    OpfSolution,
    aux_terminal_currents,
    build_ar_opf,
    build_r_opf,
    evaluate_aux,
    exactness_gap,
    solve_model,
    strict_set,
)
from .recovery import (
    RecoveryError,
    envelope_report,
    recover,
    recovered_solution,
    verify_fixed_point,
)

MATRIX_NAMES = ("G", "H", "B", "M", "C", "D", "E", "F", "pi", "rho", "theta")


# ---- small shared pieces ---------------------------------------------------


def _emit(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
        return
    Path(path).write_text(text)
    print(f"wrote {path}")


def _csv_text(header: list[str], rows: list[list]) -> str:
    def cell(x) -> str:
        if isinstance(x, float):
            return repr(x)
        return str(x)

    out = [",".join(header)]
    out.extend(",".join(cell(c) for c in row) for row in rows)
    return "\n".join(out) + "\n"


def _load(args: argparse.Namespace) -> RadialGrid:
    grid = load_grid(args.grid, allow_zero_shunt=args.allow_zero_shunt)
    scale = getattr(args, "scale", 1.0)
    if scale != 1.0:
        grid = with_pmin_scale(grid, scale)
    return grid


def _add_grid(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("grid", help="bundled grid name or path to a .grid file")
    sp.add_argument("--allow-zero-shunt", action="store_true",
                    help="accept lines with b = 0 (shunt-free limit)")


def _feeder_order(grid: RadialGrid) -> list[int]:
    """0-based line indices in depth-first order from the feeder head."""
    kids = grid.children()
    roots = [l for l in range(grid.n_lines) if grid.lines[l].up == 0]
    order: list[int] = []
    stack = list(reversed(roots))
    while stack:
        l = stack.pop()
        order.append(l)
        stack.extend(reversed(kids[l]))
    return order


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in header]
    for row in rows:
        for j, cell in enumerate(row):
            widths[j] = max(widths[j], len(cell))
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    lines = [fmt.format(*header)]
    lines.extend(fmt.format(*row) for row in rows)
    return "\n".join(lines)


# ---- check-conditions ------------------------------------------------------


def cmd_check(args: argparse.Namespace) -> int:
    grid = _load(args)
    rep = check_all(grid, rule=args.pmax_rule)
    label = grid.name or args.grid
    print(f"{label}: {grid.n_lines} lines, injection scale {args.scale:g}, "
          f"bound rule {args.pmax_rule}")
    print(rep.summary())
    if args.csv:
        header = ["grid", "scale", "rule", "c1_norm", "c2_norm",
                  "eta1", "eta2", "eta5", "eta", "holds", "failed"]
        row = [label, float(args.scale), args.pmax_rule,
               rep.c1_norm, rep.c2_norm, rep.eta1, rep.eta2, rep.eta5,
               rep.eta, rep.holds, "+".join(rep.failed())]
        _emit(args.csv, _csv_text(header, [row]))
    return 0 if rep.holds else 1


# ---- matrices dump ---------------------------------------------------------


def cmd_matrices_dump(args: argparse.Namespace) -> int:
    grid = _load(args)
    mat = build_matrices(grid, rule=args.pmax_rule)
    out = Path(args.out_dir or f"{(grid.name or 'grid')}-matrices")
    out.mkdir(parents=True, exist_ok=True)
    for name in MATRIX_NAMES:
        arr = np.asarray(getattr(mat, name), dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        np.savetxt(out / f"{name}.csv", arr, delimiter=",")
    print(f"wrote {', '.join(MATRIX_NAMES)} under {out}/ "
          f"(row/column l is line l+1; vectors are single columns)")
    return 0


# ---- loadflow --------------------------------------------------------------


def _read_injections(path: str, n: int) -> np.ndarray:
    """Whitespace table: one line per bus, columns `bus p q` (1-based id,
    per-unit powers, consumption positive). Unlisted buses inject zero;
    `#` starts a comment."""
    s = np.zeros(n, dtype=complex)
    seen: set[int] = set()
    first = True
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if first and parts[0].lower() == "bus":
            first = False
            continue
        first = False
        if len(parts) != 3:
            raise GridError(f"{path}:{lineno}: expected `bus p q`, got {raw!r}")
        try:
            i, p, q = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError:
            raise GridError(f"{path}:{lineno}: bad number in {raw!r}") from None
        if not 1 <= i <= n:
            raise GridError(f"{path}:{lineno}: bus {i} outside 1..{n}")
        if i in seen:
            raise GridError(f"{path}:{lineno}: bus {i} listed twice")
        seen.add(i)
        s[i - 1] = p + 1j * q
    return s


def _current_profile_rows(grid: RadialGrid, lf) -> list[list]:
    """Two rows per line (top end, then bottom end), depth-first along
    the feeder. pos_km is the cable distance from the feeder head when
    line lengths are known, 0 otherwise; depth counts lines from the
    head and always works as a plot axis."""
    i_base = grid.base.i_base_a
    top_sq, bot_sq = terminal_currents(grid, lf)
    depth = np.zeros(grid.n_lines, dtype=int)
    dist = np.zeros(grid.n_lines)
    rows: list[list] = []
    for l in _feeder_order(grid):
        up = grid.lines[l].up
        d0 = 0 if up == 0 else int(depth[up - 1])
        km0 = 0.0 if up == 0 else float(dist[up - 1])
        depth[l] = d0 + 1
        dist[l] = km0 + grid.lines[l].length_km
        rows.append([l + 1, "top", up, d0, km0,
                     float(np.sqrt(top_sq[l]) * i_base)])
        rows.append([l + 1, "bot", l + 1, d0 + 1, float(dist[l]),
                     float(np.sqrt(bot_sq[l]) * i_base)])
    return rows


def cmd_loadflow(args: argparse.Namespace) -> int:
    grid = _load(args)
    sol = None
    if args.verify:
        sol = OpfSolution.from_text(Path(args.verify).read_text())
        s = sol.s
        if len(s) != grid.n_lines:
            raise GridError(f"solution has {len(s)} buses, grid has "
                            f"{grid.n_lines}")
    elif args.injections:
        s = _read_injections(args.injections, grid.n_lines)
    else:
        raise GridError("pass --injections FILE or --verify SOLUTION")

    lf = solve_loadflow(grid, s)
    i_base = grid.base.i_base_a
    top_sq, bot_sq = terminal_currents(grid, lf)

    rows = []
    for l in range(grid.n_lines):
        rows.append([
            str(l + 1), str(grid.lines[l].up),
            f"{np.sqrt(lf.v[l]):.6f}",
            f"{lf.S_top[l].real: .6f}", f"{lf.S_top[l].imag: .6f}",
            f"{lf.S_bot[l].real: .6f}", f"{lf.S_bot[l].imag: .6f}",
            f"{lf.f[l]:.6f}",
            f"{np.sqrt(top_sq[l]) * i_base:8.2f}",
            f"{np.sqrt(bot_sq[l]) * i_base:8.2f}",
        ])
    print(_table(["line", "up", "|V| pu", "P_top", "Q_top", "P_bot",
                  "Q_bot", "f pu", "i_top A", "i_bot A"], rows))
    print(f"converged in {lf.iterations} sweeps, equation residual "
          f"{lf.residual:.3e}")

    violations = check_operational(grid, lf)
    if violations:
        print(f"{len(violations)} operating-limit violations:")
        for kind, idx, excess in violations:
            print(f"  {kind} at {idx}: excess {excess:.6f}")
    else:
        print("all operating limits satisfied")

    if args.csv:
        header = ["line", "end", "bus", "depth", "pos_km", "i_a"]
        _emit(args.csv, _csv_text(header, _current_profile_rows(grid, lf)))

    if sol is not None:
        dev = {
            "v": float(np.max(np.abs(sol.values["v"] - lf.v))),
            "f": float(np.max(np.abs(sol.values["f"] - lf.f))),
            "P": float(np.max(np.abs(sol.values["P"] - lf.S_top.real))),
        }
        if "Q" in sol.values:
            dev["Q"] = float(np.max(np.abs(sol.values["Q"] - lf.S_top.imag)))
        worst = max(dev.values())
        print("deviation of the solution file from the oracle, per field:")
        for key, val in dev.items():
            print(f"  {key}: {val:.3e}")
        if worst <= args.verify_tol:
            print(f"solution matches the oracle (worst {worst:.3e} <= "
                  f"{args.verify_tol:g})")
            return 0
        print(f"solution does NOT match the oracle (worst {worst:.3e} > "
              f"{args.verify_tol:g}); expected for inexact relaxed points")
        return 1
    return 0


# ---- solve -----------------------------------------------------------------


def cmd_solve(args: argparse.Namespace) -> int:
    grid = _load(args)
    cost = load_cost(args.cost, grid.n_lines)
    solved_on = grid.with_zero_shunt() if args.no_shunt else grid
    if args.model == "aropf":
        model = build_ar_opf(solved_on, cost=cost, rule=args.pmax_rule)
    else:
        model = build_r_opf(solved_on, cost)

    t0 = time.perf_counter()
    sol = solve_model(model, solver=args.solver)
    dt = time.perf_counter() - t0

    gap = exactness_gap(sol, solved_on)
    strict = strict_set(sol, solved_on)
    print(f"{sol.kind} on {sol.grid_name}: {sol.status} in {dt:.3f} s "
          f"({sol.solver})")
    print(f"objective          {sol.objective:.6f}")
    print(f"residuals          eq {sol.eq_residual:.2e}  ineq "
          f"{sol.ineq_residual:.2e}  cone {sol.cone_residual:.2e}")
    print(f"max exactness gap  {float(np.max(gap)):.3e}")
    if len(strict):
        print(f"strict cone slack on lines {[int(l) + 1 for l in strict]}")
    else:
        print("relaxation tight on every line")

    stem = Path(args.grid).stem
    suffix = "-noshunt" if args.no_shunt else ""
    out = args.out or f"{stem}-{args.model}{suffix}.sol"
    Path(out).write_text(sol.to_text())
    print(f"wrote {out}")
    return 0 if sol.ok else 1


# ---- recover ---------------------------------------------------------------


def cmd_recover(args: argparse.Namespace) -> int:
    sol = OpfSolution.from_text(Path(args.solution).read_text())
    grid = _load(args)
    mat = build_matrices(grid)
    trace = recover(sol, grid, mat)
    print(f"extraction settled in {trace.n_iterations} iterations "
          f"(final step {trace.delta_f_inf[-1]:.2e})")

    report = verify_fixed_point(trace, sol, grid)
    print(f"flow-equation residual   {report.eq_residual:.3e}")
    print(f"oracle deviation         {report.oracle_max_dev:.3e}")
    print(f"operating violations     {len(report.violations)}")
    if len(report.strict_lines):
        lines = [int(l) + 1 for l in report.strict_lines]
        print(f"input cone slack on lines {lines}; head import drops by "
              f"{report.import_decrease:.3e} pu")
    else:
        print("input was already exact; recovery is a fixed point")
    print("verification " + ("PASSED" if report.ok
                             else "FAILED: " + "; ".join(report.failures())))

    cond = check_all(grid)
    env = envelope_report(trace, sol, grid, mat, eta=cond.eta)
    if env:
        print(f"{len(env)} envelope violations (first: {env[0].rule} at "
              f"iteration {env[0].n})")
    else:
        print(f"all iterate envelopes hold over {trace.n_iterations} "
              f"iterations")

    out = args.out or f"{Path(args.solution).stem}-recovered.sol"
    Path(out).write_text(recovered_solution(trace, sol, grid).to_text())
    print(f"wrote {out}")

    if args.trace:
        normE = float(np.linalg.norm(mat.E, "fro"))
        header = ["n", "delta_f_inf", "delta_f_2", "contraction_bound"]
        rows = []
        for n in range(1, trace.n_iterations + 1):
            rows.append([n, float(trace.delta_f_inf[n - 1]),
                         float(trace.delta_f_2[n - 1]),
                         float(normE ** (n - 1) * trace.delta_f_2[0])])
        _emit(args.trace, _csv_text(header, rows))
    return 0 if report.ok and not env else 1


# ---- bench -----------------------------------------------------------------


def cmd_bench_threebus(args: argparse.Namespace) -> int:
    res = run_threebus_comparison(solver=args.solver)
    print(res.summary())
    if args.csv:
        _emit(args.csv, res.to_csv())
    return 0


def cmd_bench_sweep(args: argparse.Namespace) -> int:
    grid = _load(args)
    res = sweep_conditions(grid)
    print(res.summary())
    if args.csv:
        hi = 1.25 * res.k_star if np.isfinite(res.k_star) else 8.0
        ks = sorted(set(np.linspace(1.0, hi, 25)) | {min(res.k_star, hi)})
        header = ["k", "c1_norm", "c2_norm", "eta1", "eta2", "eta5",
                  "eta", "holds", "failed"]
        rows = []
        for k in ks:
            rep = check_all(with_pmin_scale(grid, float(k)))
            rows.append([float(k), rep.c1_norm, rep.c2_norm, rep.eta1,
                         rep.eta2, rep.eta5, rep.eta, rep.holds,
                         "+".join(rep.failed())])
        _emit(args.csv, _csv_text(header, rows))
    return 0


def cmd_bench_compress(args: argparse.Namespace) -> int:
    grid = _load(args)
    res = quantify_compression(grid, mode=args.mode)
    print(res.summary())
    if args.csv:
        t = res.ramp_mw / grid.base.s_base_mva
        p, q = _ramp_point(grid, t)
        lf = solve_loadflow(grid, p + 1j * q)
        if args.mode == "voltage":
            vb = vbar_linear(build_matrices(grid), p, q)
            header = ["bus", "v_env_pu", "v_phys_pu", "gap_pu", "at_cap"]
            rows = []
            for j in range(grid.n_lines):
                env, phys = float(np.sqrt(vb[j])), float(np.sqrt(lf.v[j]))
                rows.append([j + 1, env, phys, env - phys,
                             int(abs(vb[j] - grid.v_max) <= 1e-6)])
        else:
            mat = build_matrices(grid)
            aux = evaluate_aux(grid, mat, p, q, lf.v)
            env_top, env_bot = aux_terminal_currents(grid, aux, lf.v)
            phys_top, phys_bot = terminal_currents(grid, lf)
            i_base = grid.base.i_base_a
            header = ["line", "end", "i_env_a", "i_phys_a", "i_rating_a",
                      "at_cap"]
            rows = []
            for l in range(grid.n_lines):
                rating = float(np.sqrt(grid.i_max_sq[l]))
                for end, env_sq, phys_sq in (("top", env_top[l], phys_top[l]),
                                             ("bot", env_bot[l], phys_bot[l])):
                    rows.append([
                        l + 1, end,
                        float(np.sqrt(env_sq) * i_base),
                        float(np.sqrt(phys_sq) * i_base),
                        rating * i_base,
                        int(abs(env_sq - grid.i_max_sq[l]) <= 1e-6),
                    ])
        _emit(args.csv, _csv_text(header, rows))
    return 0


# ---- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="radialopf",
        description="Certified convex optimal power flow on radial feeders.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("check-conditions",
                        help="evaluate the five exactness conditions")
    _add_grid(sp)
    sp.add_argument("--scale", type=float, default=1.0,
                    help="multiply generation floors (p_min) by this factor")
    sp.add_argument("--pmax-rule", choices=("pct110", "loadflow"),
                    default="pct110", help="flow-bound construction rule")
    sp.add_argument("--csv", metavar="FILE",
                    help="also write the report as one CSV row")
    sp.set_defaults(func=cmd_check)

    mp = sub.add_parser("matrices", help="operator matrix tools")
    msub = mp.add_subparsers(dest="action", required=True)
    sp = msub.add_parser("dump", help="write every matrix as CSV")
    _add_grid(sp)
    sp.add_argument("--scale", type=float, default=1.0)
    sp.add_argument("--pmax-rule", choices=("pct110", "loadflow"),
                    default="pct110")
    sp.add_argument("--out-dir", help="target directory "
                    "(default <grid>-matrices/)")
    sp.set_defaults(func=cmd_matrices_dump)

    sp = sub.add_parser("loadflow", help="run the exact load-flow oracle")
    _add_grid(sp)
    sp.add_argument("--injections", metavar="FILE",
                    help="whitespace table: bus p q (per unit)")
    sp.add_argument("--verify", metavar="SOLUTION",
                    help="take injections from a solution file and compare "
                    "its state against the oracle")
    sp.add_argument("--verify-tol", type=float, default=1e-6,
                    help="verdict threshold for --verify (default 1e-6)")
    sp.add_argument("--csv", metavar="FILE",
                    help="terminal-current profile along the feeder")
    sp.set_defaults(func=cmd_loadflow)

    sp = sub.add_parser("solve", help="solve a conic model, write a "
                        "solution file")
    _add_grid(sp)
    sp.add_argument("--model", choices=("aropf", "ropf"), required=True)
    sp.add_argument("--cost", required=True,
                    help="cost file (bundled name or path)")
    sp.add_argument("--no-shunt", action="store_true",
                    help="solve with shunt susceptances forced to zero")
    sp.add_argument("--solver", default="clarabel")
    sp.add_argument("--pmax-rule", choices=("pct110", "loadflow"),
                    default="pct110")
    sp.add_argument("--out", metavar="FILE",
                    help="solution path (default <grid>-<model>.sol)")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("recover", help="extract a physical point from a "
                        "solution file")
    sp.add_argument("solution", help="solution file from `solve`")
    _add_grid(sp)
    sp.add_argument("--out", metavar="FILE",
                    help="recovered solution path (default "
                    "<solution>-recovered.sol)")
    sp.add_argument("--trace", metavar="FILE",
                    help="per-iteration step norms and the contraction bound")
    sp.set_defaults(func=cmd_recover)

    bp = sub.add_parser("bench", help="bundled studies")
    bsub = bp.add_subparsers(dest="study", required=True)

    sp = bsub.add_parser("threebus", help="ampacity comparison of the three "
                         "models on the bundled three-bus feeder")
    sp.add_argument("--solver", default="clarabel")
    sp.add_argument("--csv", metavar="FILE")
    sp.set_defaults(func=cmd_bench_threebus)

    sp = bsub.add_parser("sweep", help="scale generation until a condition "
                         "fails")
    _add_grid(sp)
    sp.add_argument("--csv", metavar="FILE",
                    help="condition report ladder over the scale axis")
    sp.set_defaults(func=cmd_bench_sweep)

    sp = bsub.add_parser("compress", help="slack between the bounding system "
                         "and the physics at one binding cap")
    _add_grid(sp)
    sp.add_argument("--mode", choices=("voltage", "ampacity"),
                    default="voltage")
    sp.add_argument("--csv", metavar="FILE",
                    help="per-bus voltages or per-terminal currents at the "
                    "binding point")
    sp.set_defaults(func=cmd_bench_compress)

    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GridError, LoadFlowError, RecoveryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
