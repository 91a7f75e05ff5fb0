"""radialopf: exactness-certified convex optimal power flow for radial
distribution grids with full Pi-line models.

The pieces, bottom to top:

- `network`: grid data model, per-unit conversion, the text grid
  format, and the structural adjacency/reachability matrices.
- `matrices`: closed-form sensitivity operators of the linearized
  voltage/flow bounds and the operating-envelope scalings.
- `conditions`: the five certificate checks that make the relaxation
  exact and the extraction map contractive.
- `loadflow`: independent backward/forward sweep oracle on the exact
  equations.
- `program` / `opf`: conic-program container, one solver binding, and
  the relaxed/augmented model builders.
- `recovery`: fixed-point extraction of a physical operating point
  from any feasible relaxed solution, with envelope verification.
- `bench`: the desk-scale experiments (three-bus comparison, condition
  sweeps, envelope-compression quantification).
"""

from .network import (
    Bus,
    GridError,
    InjectionSet,
    Line,
    ParseError,
    PerUnitBase,
    RadialGrid,
    ValidationError,
    adjacency,
    bundled_grid_names,
    closure,
    from_per_unit,
    load_grid,
    parse_grid,
    to_per_unit,
    upstream,
)
from .matrices import GridMatrices, OperatingBounds, bounds_from_rule, build_matrices
from .conditions import ConditionReport, check_all, ratio_condition
from .loadflow import (
    LoadFlowError,
    LoadFlowResult,
    check_operational,
    prescribed_current_state,
    solve_loadflow,
    terminal_currents,
)
from .program import ConicProgram, LinExpr, ProgramResult
from .opf import (
    AuxState,
    CostModel,
    OpfModel,
    OpfSolution,
    aux_terminal_currents,
    build_ar_opf,
    build_r_opf,
    evaluate_aux,
    exactness_gap,
    fbar_fixed_point,
    linear_bounds,
    o_opf_check,
    solve_model,
    strict_set,
    with_cone_slack,
)
from .recovery import (
    FixedPointReport,
    RecoveryError,
    RecoveryTrace,
    envelope_report,
    recover,
    recovered_solution,
    verify_fixed_point,
)
from .bench import (
    BenchError,
    ComparisonResult,
    CompressionResult,
    SweepResult,
    load_cost,
    quantify_compression,
    run_threebus_comparison,
    sweep_conditions,
    with_pmin_scale,
)

__version__ = "0.1.0"
