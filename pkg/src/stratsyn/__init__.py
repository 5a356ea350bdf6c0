"""Synthesis of finite-memory randomized moving strategies on weighted graphs.

The package models a terrain as a strongly connected directed graph with
integer traversal times, expresses recurring-visit objectives (mean payoff,
renewal times, patrolling damage, and hand-built combinations) over hitting
times, squared hitting times, edge frequencies, and strategy probabilities,
and synthesizes strategies by Adam-driven gradient descent on a smooth
relaxation of the objective.
"""

__version__ = "0.1.0"

from .model import (
    Graph,
    ConfigGraph,
    Coefficients,
    Strategy,
    GraphError,
    NotStronglyConnected,
    NonPositiveTraversalTime,
    EmptyRow,
    validate_graph,
    build_config_graph,
    softmax_strategy,
    cutoff,
)
from .chain import (
    Bscc,
    HittingProfile,
    FrequencyProfile,
    SingularMatrix,
    solve_linear,
    bsccs,
    hitting_times,
    squared_hitting_times,
    hitting_profile,
    frequencies,
)
from .expr import (
    EvalValue,
    INFINITE,
    UNDEFINED,
    Problem,
    UnknownReference,
    IllegalDenominator,
    validate_expr,
)
from . import expr
from .evaluate import AtomCache, EvalParams, eval_in_bscc, sigma_value
from .relax import RelaxParams, relax
from .gradient import CompiledObjective, compile_relaxed, eval_with_gradient, finite_diff_check
from .optimize import OptimizerConfig, TrialResult, optimize, run_trials
from .objectives import (
    PayoffSpec,
    MissingPayoff,
    EmptyTargets,
    MissingAttackDistribution,
    mp_objective,
    mp_components,
    renewal_objective,
    renewal_components,
    adversarial_patrol_objective,
    edam_objective,
)
from .formats import (
    ParseError,
    load_graph,
    write_graph,
    load_objective,
    load_strategy,
    write_strategy,
    expr_to_json,
    expr_from_json,
)
from .harness import RunManifest, SweepSpec, run_optimize, run_sweep, check_gradients, eval_strategy
