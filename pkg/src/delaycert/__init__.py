"""delaycert: solve first-order delay differential systems by the method of
steps and certify Gronwall-based deviation, dependence and stability bounds
against measured trajectories."""

from .bounds import (
    Certificate,
    ResidualReport,
    certify_dependence,
    certify_stability,
    dependence_bound,
    perturbation_bound,
    residual,
    resolve_lipschitz,
    stability_bound,
)
from .errors import (
    ContractError,
    DomainError,
    EvalError,
    ParseError,
    ProblemFileError,
    QuadratureWarning,
)
from .expr import (
    DomainBox,
    EvalEnv,
    ExprSystem,
    bind_system,
    compile_fn,
    estimate_lipschitz,
    evaluate,
    parse,
    time_function,
    to_source,
)
from .gronwall import (
    BoundInputs,
    cumulative_integral_curve,
    cumulative_kernel_integral,
    extremal_solution,
    gronwall_bound,
    gronwall_bound_ac,
    linear_table,
)
from .integrate import (
    GridConfig,
    OrderEstimate,
    PicardConfig,
    constant_lags,
    convergence_order,
    picard_solve,
    propagated_breaking_points,
    solve,
)
from .norms import block_max_norm, max_norm
from .problem import (
    DelayedProblem,
    HistoryFunctional,
    Trajectory,
    deviation_curve,
    perturbed,
    sup_distance,
)
from .problemfile import (
    LoadedProblem,
    catalog_names,
    load_catalog,
    load_problem,
    resolve_problem,
)
from .reduction import HigherOrderProblem, extract_first, reduce_to_first_order

__version__ = "0.1.0"
