"""Exact analysis and Monte Carlo simulation of branching-annihilating
random walk in the mean-field (complete-graph) setting."""

from .bounds import (
    BoundSet,
    CheckReport,
    binomial_tail_bound,
    check_envelope,
    check_gamma_ratio,
    check_geometric,
    check_ratio_beta,
    check_ratio_kappa,
    check_tilted_dominance,
    coupling_offspring_mean,
    default_alpha,
    envelope_bounds,
    envelope_log_bounds,
    geometric_upper,
    make_bound_set,
    render_reports,
    stochastic_dominance,
    tilted_reference_pmf,
)
from .chain import (
    LevelSpec,
    ModelParams,
    branch_prob,
    equilibrium,
    gw_extinction_prob,
    level_spec,
    threshold_u,
    transition_log_row,
    transition_logpmf,
)
from .logdomain import LogValue
from .simulate import (
    EstimateWithCI,
    GraphSpec,
    ParticleState,
    Trajectory,
    TruncationError,
    complete_graph,
    estimate_conditioned_length,
    estimate_hitting_prob,
    graph_from_name,
    parse_graph_file,
    particle_step_counts,
    run_to_absorption,
    sample_conditioned_path,
    single_origin_state,
    step_meanfield,
    step_particle,
    trial_stream,
    tv_distance,
)
from .solver import (
    HittingProfile,
    KernelConsistencyError,
    ProfileFormatError,
    SolveOverflowError,
    SolverError,
    TiltedKernel,
    TimeProfile,
    conditional_expected_extinction,
    conditional_occupation_time,
    hitting_profile,
    read_profile,
    tilted_kernel,
    unconditional_expected_extinction,
    write_profile,
)

__version__ = "0.1.0"

__all__ = [
    "BoundSet",
    "CheckReport",
    "EstimateWithCI",
    "GraphSpec",
    "HittingProfile",
    "KernelConsistencyError",
    "LevelSpec",
    "LogValue",
    "ModelParams",
    "ParticleState",
    "ProfileFormatError",
    "SolveOverflowError",
    "SolverError",
    "TiltedKernel",
    "TimeProfile",
    "Trajectory",
    "TruncationError",
    "binomial_tail_bound",
    "branch_prob",
    "check_envelope",
    "check_gamma_ratio",
    "check_geometric",
    "check_ratio_beta",
    "check_ratio_kappa",
    "check_tilted_dominance",
    "complete_graph",
    "conditional_expected_extinction",
    "conditional_occupation_time",
    "coupling_offspring_mean",
    "default_alpha",
    "envelope_bounds",
    "envelope_log_bounds",
    "equilibrium",
    "estimate_conditioned_length",
    "estimate_hitting_prob",
    "geometric_upper",
    "graph_from_name",
    "gw_extinction_prob",
    "hitting_profile",
    "level_spec",
    "make_bound_set",
    "parse_graph_file",
    "particle_step_counts",
    "read_profile",
    "render_reports",
    "run_to_absorption",
    "sample_conditioned_path",
    "single_origin_state",
    "step_meanfield",
    "step_particle",
    "stochastic_dominance",
    "threshold_u",
    "tilted_kernel",
    "tilted_reference_pmf",
    "transition_log_row",
    "transition_logpmf",
    "trial_stream",
    "tv_distance",
    "unconditional_expected_extinction",
    "write_profile",
]
