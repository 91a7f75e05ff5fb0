"""Shared fixtures.

Everything expensive is session-scoped: the bundled grids, one solved
optimum per model on the three-bus feeder, the two condition sweeps,
the four compression runs, and the 50-feeder randomized batch with its
perturb-and-recover counterpart. The acceptance tests and the unit
tests read the same objects, so the solver work happens once.
"""

import time

import pytest

from radialopf import (
    build_ar_opf,
    build_matrices,
    build_r_opf,
    load_grid,
    solve_model,
)
from radialopf.bench import (
    load_cost,
    quantify_compression,
    run_threebus_comparison,
    sweep_conditions,
)

import randnets


@pytest.fixture(scope="session")
def threebus():
    return load_grid("threebus")


@pytest.fixture(scope="session")
def ieee34():
    return load_grid("ieee34")


@pytest.fixture(scope="session")
def cigre():
    return load_grid("cigre_mv")


@pytest.fixture(scope="session")
def threebus_mat(threebus):
    return build_matrices(threebus)


@pytest.fixture(scope="session")
def threebus_cost(threebus):
    return load_cost("threebus", threebus.n_lines)


@pytest.fixture(scope="session")
def ar_solution(threebus, threebus_cost):
    sol = solve_model(build_ar_opf(threebus, cost=threebus_cost))
    assert sol.status == "optimal"
    return sol


@pytest.fixture(scope="session")
def ropf_solution(threebus, threebus_cost):
    sol = solve_model(build_r_opf(threebus, threebus_cost))
    assert sol.status == "optimal"
    return sol


@pytest.fixture(scope="session")
def noshunt_solution(threebus, threebus_cost):
    sol = solve_model(build_ar_opf(threebus.with_zero_shunt(),
                                   cost=threebus_cost))
    assert sol.status == "optimal"
    return sol


@pytest.fixture(scope="session")
def threebus_comparison():
    return run_threebus_comparison()


@pytest.fixture(scope="session")
def ieee34_sweep(ieee34):
    t0 = time.perf_counter()
    res = sweep_conditions(ieee34)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="session")
def cigre_sweep(cigre):
    t0 = time.perf_counter()
    res = sweep_conditions(cigre)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="session")
def compression(ieee34, cigre):
    """(grid name, mode) -> CompressionResult for all four studies."""
    out = {}
    for name, grid in (("ieee34", ieee34), ("cigre_mv", cigre)):
        for mode in ("voltage", "ampacity"):
            out[name, mode] = quantify_compression(grid, mode=mode)
    return out


@pytest.fixture(scope="session")
def lemma_batch():
    return randnets.conditioned_batch(50)


@pytest.fixture(scope="session")
def recovery_batch(lemma_batch):
    return [randnets.perturb_and_recover(case) for case in lemma_batch]
