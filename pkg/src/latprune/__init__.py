"""latprune: latency-constrained structured pruning planner.

Given a layer chain with removable residual blocks, per-channel importance
scores, and per-layer latency lookup tables, jointly choose kept-channel
counts and block removals that maximize total importance under a latency
budget, with a certified optimality gap.
"""

from .baseline import BaselineState, exponential_schedule, halp_step, run_halp
from .extract import PrunePlan, extract_plan, load_plan, save_plan, validate_plan
from .importance import (
    ChannelScores,
    LayerImportance,
    aggregate_layer_importance,
    arg_top_k,
    load_scores,
    save_scores,
)
from .latency import (
    DeviceModel,
    LatencyTable,
    bilayer_latency,
    build_cost_matrix,
    dense_latency,
    halp_channel_cost,
    halp_error_bound,
    load_tables,
    save_tables,
    synthesize_table,
    total_plan_latency,
)
from .netgraph import (
    INPUT_SENTINEL,
    BlockSpec,
    LayerSpec,
    NetworkSpec,
    effective_predecessor,
    load_network,
    save_network,
    validate_network,
)
from .solver import (
    Problem,
    Solution,
    SolveOptions,
    allowed_counts,
    build_problem,
    lagrangian_dp,
    min_latency,
    solve,
    solve_exact,
)

__all__ = [
    "BaselineState", "BlockSpec", "ChannelScores", "DeviceModel", "INPUT_SENTINEL",
    "LatencyTable", "LayerImportance", "LayerSpec", "NetworkSpec", "Problem",
    "PrunePlan", "Solution", "SolveOptions", "aggregate_layer_importance",
    "allowed_counts", "arg_top_k", "bilayer_latency", "build_cost_matrix",
    "build_problem", "dense_latency", "effective_predecessor",
    "exponential_schedule", "extract_plan", "halp_channel_cost",
    "halp_error_bound", "halp_step", "lagrangian_dp", "load_network",
    "load_plan", "load_scores", "load_tables", "min_latency", "run_halp",
    "save_network", "save_plan", "save_scores", "save_tables", "solve",
    "solve_exact", "synthesize_table", "total_plan_latency", "validate_network",
    "validate_plan",
]

__version__ = "0.1.0"
