//! NSGA-II and the latent-space and direct optimization workflows.

pub mod nsga2;
pub mod workflow;

pub use nsga2::{
    crowding_distance, dominates, fast_nondominated_sort, nsga2_run, polynomial_mutation, sbx_crossover,
    Evaluation, FnProblem, GenerationStats, Individual, MooProblem, MooSettings, Nsga2Result,
};
pub use workflow::{
    direct_objective, decoded_bound_constraints, latent_objective, latent_objective_batch, optimize_direct, optimize_latent, pareto_svg,
    transform_decoded, validate_pareto, ArchiveEntry, DirectProblem, LatentProblem, OptimizationRun,
    ParetoArchive, ValidationSummary, Workflow, LATENT_BOUND,
};
