//! Monte Carlo laboratory for randomly biased walks on Galton-Watson
//! trees in the slow, null-recurrent regime.
//!
//! The crate has three layers:
//!
//! * microscopic simulation: marked-tree environments ([`env_model`]),
//!   the quenched walk ([`walker`]), and a direct sampler for the law of
//!   the walk's range as a multi-type branching tree ([`range_sampler`]);
//! * structure extraction: level counts, edge local times, regeneration
//!   vertices and encodings of the reduced range tree ([`reduction`]);
//! * asymptotics: closed-form limit constants and Laplace functionals
//!   ([`limit_laws`]), estimators and goodness-of-fit machinery
//!   ([`stats`]), and seeded campaign drivers ([`montecarlo`]) producing
//!   serializable reports ([`report`]).
//!
//! Everything downstream of a master seed is deterministic, including
//! under data-parallel execution.

pub mod env_model;
pub mod limit_laws;
pub mod montecarlo;
pub mod range_sampler;
pub mod reduction;
pub mod report;
pub mod seeding;
pub mod stats;
pub mod walker;

pub use env_model::{
    make_gaussian_binary_family, validate_assumptions, EnvTree, EnvironmentSpec, GrowthCaps,
    ValidationReport, VertexId,
};
pub use montecarlo::{ExperimentPlan, MonteCarloError, PlanCaps, SampleMode};
pub use seeding::StreamKey;
