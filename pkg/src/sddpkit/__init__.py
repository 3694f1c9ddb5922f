"""Data-driven SDDP with kernel-conditioned weights and a distributionally robust variant."""

__version__ = "0.1.0"

from .approximations import (
    Cut,
    CutLowerTerms,
    CutPool,
    EnvelopeStore,
    EnvelopeUpperTerms,
    WeightedLowerTerms,
    aggregate_backward,
    envelope_value,
    lower_value,
)
from .driver import (
    Algorithm,
    CrossValidationResult,
    GapMode,
    IterationRecord,
    Policy,
    PolicyReport,
    SolveConfig,
    cross_validate_rho,
    evaluate_policy_out_of_sample,
    extensive_form_oracle,
    gap_converged,
    generalization_bound,
    run,
)
from .kernel import (
    BandwidthRule,
    ConditionalWeights,
    KernelConfig,
    KernelKind,
    auto_bandwidth,
    nw_weights,
)
from .lp import (
    LinearProgram,
    LpSolution,
    LpStatus,
    SolverOptions,
    enumerate_vertices,
    solve,
)
from .robust import (
    AmbiguityParams,
    DroLowerTerms,
    RhoRule,
    check_vr_sandwich,
    dualize_inner,
    inner_max_primal,
    rate_scaled_rho,
    sanitize_nominal,
    splice_dro,
)
from .scenarios import (
    ForwardScenario,
    StageDatum,
    SyntheticSpec,
    TrajectorySet,
    generate_synthetic_markov,
    load_trajectories,
    sample_forward,
    save_trajectories,
)
from .stages import (
    InstanceTemplate,
    StageProblem,
    assemble_stage_lp,
    build_portfolio_instance,
    exponential_utility_segments,
)

__all__ = [
    "__version__",
    "Algorithm",
    "AmbiguityParams",
    "BandwidthRule",
    "ConditionalWeights",
    "CrossValidationResult",
    "Cut",
    "CutLowerTerms",
    "CutPool",
    "DroLowerTerms",
    "EnvelopeStore",
    "EnvelopeUpperTerms",
    "ForwardScenario",
    "GapMode",
    "InstanceTemplate",
    "IterationRecord",
    "KernelConfig",
    "KernelKind",
    "LinearProgram",
    "LpSolution",
    "LpStatus",
    "Policy",
    "PolicyReport",
    "RhoRule",
    "SolveConfig",
    "SolverOptions",
    "StageDatum",
    "StageProblem",
    "SyntheticSpec",
    "TrajectorySet",
    "WeightedLowerTerms",
    "aggregate_backward",
    "assemble_stage_lp",
    "auto_bandwidth",
    "build_portfolio_instance",
    "check_vr_sandwich",
    "cross_validate_rho",
    "dualize_inner",
    "enumerate_vertices",
    "envelope_value",
    "evaluate_policy_out_of_sample",
    "exponential_utility_segments",
    "extensive_form_oracle",
    "gap_converged",
    "generalization_bound",
    "generate_synthetic_markov",
    "inner_max_primal",
    "load_trajectories",
    "lower_value",
    "nw_weights",
    "rate_scaled_rho",
    "run",
    "sample_forward",
    "sanitize_nominal",
    "save_trajectories",
    "solve",
    "splice_dro",
]
