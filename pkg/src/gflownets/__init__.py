"""Samplers of discrete compositional objects trained by flow matching.

The package trains stochastic policies over directed acyclic construction
graphs so that completed objects are sampled with probability proportional
to a reward.  It ships four training objectives (flow matching, detailed
balance, trajectory balance, and geometric sub-trajectory balance), two
benchmark environments, exact evaluation utilities, and gradient
bias/variance diagnostics.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, finite_difference_gradient
from .config import (
    DiagnosticsBlock,
    EnvBlock,
    EvalBlock,
    ExperimentConfig,
    ExplorationBlock,
    LAM_GRID,
    LR_GRID,
    ObjectiveBlock,
    OptimizerBlock,
    ParamsBlock,
    SEQ_LAM_GRID,
    build_env,
    build_policy,
    config_from_dict,
    config_to_dict,
    load_config,
)
from .diagnostics import (
    DIAGNOSED_OBJECTIVES,
    FLOW_SOURCES,
    cross_objective_similarity,
    flow_override_for,
    per_trajectory_gradients,
    similarity_records,
    subbatch_similarity,
    true_backward_log_flow,
    true_forward_log_flow,
)
from .environments import (
    BitSequence,
    GRID_HARDER,
    GRID_STANDARD,
    GridState,
    HyperGrid,
    SeqState,
    Trajectory,
    enumerate_complete_trajectories,
    validate_trajectory,
)
from .estimator import GFlowNetSampler
from .evaluation import (
    SampleWindow,
    TargetDistribution,
    empirical_l1,
    exact_target,
    log_marginals_of,
    log_reachability,
    mode_ids_of,
    pearson_log_correlation,
    sequence_test_states,
    spearman_correlation,
    terminal_log_marginals,
)
from .exceptions import (
    ConfigError,
    DegenerateMetricError,
    EnumerationBudgetError,
    EnvironmentMismatchError,
    GFlowNetError,
    InvalidTransitionError,
    NonFiniteLogitError,
    NonFiniteLossError,
    NotEnumerableError,
)
from .nn import Adam, Mlp, MlpSpec
from .objectives import (
    OBJECTIVES,
    batch_loss,
    db_loss,
    fm_loss,
    normalized_pair_weights,
    pair_indices,
    per_trajectory_loss,
    prefix_residuals,
    subtb_loss,
    subtrajectory_loss,
    subtrajectory_pair_count,
    tb_loss,
    transition_residuals,
)
from .policies import (
    EdgeFlowPolicy,
    FlowMatchingQuantities,
    MlpPolicy,
    TabularPolicy,
    TransitionQuantities,
)
from .sampling import (
    STREAM_DATA,
    STREAM_DIAGNOSTICS,
    STREAM_SAMPLE,
    STREAM_TRAIN,
    ExplorationPolicy,
    action_probabilities,
    batch_rng,
    sample_batch,
    sample_trajectory,
)
from .training import (
    MetricRecord,
    TrainResult,
    TrainingMonitor,
    evaluate_policy,
    graddiag_run,
    held_out_correlations,
    load_checkpoint,
    save_checkpoint,
    train,
    write_metrics_csv,
    write_similarity_csvs,
)

__all__ = [
    "__version__",
    # autodiff / nn
    "Tensor", "finite_difference_gradient", "Adam", "Mlp", "MlpSpec",
    # environments
    "HyperGrid", "BitSequence", "GridState", "SeqState", "Trajectory",
    "GRID_STANDARD", "GRID_HARDER", "enumerate_complete_trajectories",
    "validate_trajectory",
    # policies
    "TabularPolicy", "MlpPolicy", "EdgeFlowPolicy",
    "TransitionQuantities", "FlowMatchingQuantities",
    # objectives
    "OBJECTIVES", "batch_loss", "subtb_loss", "tb_loss", "db_loss", "fm_loss",
    "per_trajectory_loss", "transition_residuals", "prefix_residuals",
    "subtrajectory_loss", "subtrajectory_pair_count", "pair_indices",
    "normalized_pair_weights",
    # sampling
    "ExplorationPolicy", "sample_batch", "sample_trajectory", "batch_rng",
    "action_probabilities",
    "STREAM_TRAIN", "STREAM_DIAGNOSTICS", "STREAM_SAMPLE", "STREAM_DATA",
    # evaluation
    "TargetDistribution", "exact_target", "SampleWindow", "empirical_l1",
    "terminal_log_marginals", "log_marginals_of", "log_reachability",
    "spearman_correlation", "pearson_log_correlation", "mode_ids_of",
    "sequence_test_states",
    # diagnostics
    "FLOW_SOURCES", "DIAGNOSED_OBJECTIVES", "per_trajectory_gradients",
    "subbatch_similarity", "cross_objective_similarity", "similarity_records",
    "true_forward_log_flow", "true_backward_log_flow", "flow_override_for",
    # config
    "ExperimentConfig", "EnvBlock", "ParamsBlock", "ObjectiveBlock",
    "ExplorationBlock", "OptimizerBlock", "EvalBlock", "DiagnosticsBlock",
    "load_config", "config_from_dict", "config_to_dict", "build_env",
    "build_policy", "LR_GRID", "LAM_GRID", "SEQ_LAM_GRID",
    # training
    "train", "graddiag_run", "TrainResult", "TrainingMonitor", "MetricRecord",
    "evaluate_policy", "held_out_correlations", "save_checkpoint",
    "load_checkpoint", "write_metrics_csv", "write_similarity_csvs",
    # estimator
    "GFlowNetSampler",
    # exceptions
    "GFlowNetError", "ConfigError", "EnvironmentMismatchError",
    "InvalidTransitionError", "EnumerationBudgetError", "NotEnumerableError",
    "NonFiniteLossError", "NonFiniteLogitError", "DegenerateMetricError",
]
