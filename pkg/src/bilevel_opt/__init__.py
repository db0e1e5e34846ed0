"""Adaptive single-loop stochastic bilevel optimization.

Library surface: constraint sets and generalized projections, Neumann-series
hypergradient estimators, adaptive matrix rules, the two solver loops, derived
constants and theorem parameter boxes, and two verifiable benchmark tasks.
The ``bilevel-opt`` CLI drives seeded experiments to CSV traces and figures.
"""

from .adaptive import AdaptiveKind, AdaptiveState, init_state, update_inner_scalar, update_outer_matrix
from .constraints import (
    Ball,
    Box,
    Unconstrained,
    generalized_project,
    gradient_mapping_norm,
    project,
)
from .errors import (
    ConfigError,
    ContractViolation,
    Diverged,
    InfeasibleParameters,
    NumericalFailure,
)
from .hypergrad import (
    HypergradBatch,
    bias_bound,
    choose_K,
    estimate_neumann,
    exact_hypergradient,
    expected_neumann,
)
from .keys import SampleKey, derive_key
from .oracles import ProblemConstants, ProblemOracles
from .solver import (
    IterationRecord,
    RunResult,
    SolverConfig,
    SolverState,
    direction_update_momentum,
    direction_update_storm,
    replay_direction_estimates,
    run,
    schedule,
    step,
    validate_config,
)
from .theory import (
    VARIANT_MOMENTUM,
    VARIANT_STORM,
    DerivedConstants,
    ParamBox,
    derived_constants,
    lyapunov,
    theorem_parameter_box,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
