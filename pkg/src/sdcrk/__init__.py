"""Spectral deferred corrections in the Runge-Kutta framework.

The package builds SDC methods as augmented Butcher tableaux, verifies their
convergence order through B-series over rooted trees (including order
jumps), analyzes linear stability and stiff-limit behavior, and integrates
test problems, optionally with a relaxation step that conserves a quadratic
invariant exactly.
"""

from .errors import (
    CheckMismatchError,
    IllConditionedError,
    NewtonConvergenceError,
    PoleError,
    PrecisionError,
    PrecisionWarning,
    ResourceLimitError,
    SdcError,
    SingularEedError,
    UnsupportedScheduleError,
)
from .integrate import (
    ConvergenceResult,
    IvpProblem,
    NewtonOptions,
    RelaxationConfig,
    Trajectory,
    collocation_stages,
    collocation_step,
    convergence_study,
    dahlquist_problem,
    integrate_sdc,
    long_time_error_growth,
    reference_solution,
    relaxed_update,
    rigid_body_problem,
    sdc_step,
)
from .order import (
    OrderReport,
    OrderTable,
    SdcBSeries,
    elementary_weight,
    height_order,
    internal_stage_errors,
    jump_condition_check,
    order_table,
    rk_order,
    sdc_order,
    stage_height_order,
    stage_linear_order,
    stage_weights,
    unique_diagonal_jump_eed,
)
from .stability import (
    ComplexGrid,
    GridSpec,
    NilpotencyReport,
    certify_stiff_nilpotency,
    dahlquist_sweep,
    growth_rate,
    growth_rate_grid,
    iteration_matrix,
    stability_function,
    stability_region,
    stiff_limit_matrix,
)
from .tableau import (
    EXTRAPOLATION,
    LAST_STAGE,
    QUADRATURE,
    AssumptionReport,
    ButcherTableau,
    EedMatrix,
    EedSchedule,
    NodeFamily,
    SdcMethod,
    assemble_sdc,
    check_simplifying,
    collocation_method,
    collocation_tableau,
    is_stiffly_accurate,
    make_eed,
    make_nodes,
    min_sr_s_eed,
    parse_schedule,
    sdc_method,
    tableau_from_json,
    tableau_to_json,
)
from .trees import (
    LEAF,
    RootedTree,
    b_plus,
    bamboo,
    enumerate_trees,
    forest,
    from_parens,
    gamma,
    sigma,
    trees_by_size,
)

__version__ = "0.1.0"
