//! Weakest-type VCG mechanisms with set-valued predictions.
//!
//! The crate is organized bottom-up:
//!
//! * [`env`]: allocation spaces, type profiles, efficient welfare, generators.
//! * [`lp`]: a small dense simplex solver.
//! * [`geometry`]: predictor polytopes, weakest types, error measures.
//! * [`mechanisms`]: VCG and its prediction-augmented variants.
//! * [`analysis`]: closed-form guarantees, Monte Carlo estimation, sweeps.
//! * [`suites`]: end-to-end verification suites shared by the CLI and tests.

pub mod analysis;
pub mod env;
pub mod error;
pub mod geometry;
pub mod lp;
pub mod mechanisms;
pub mod oracles;
pub mod streams;
pub mod suites;

pub use env::{
    make_environment, welfare, welfare_with_replacement, AllocationSpace, Draws, EnvKind,
    GeneratorConfig, MechanismOutcome, TypeProfile, TypeVector, CMP_EPS,
};
pub use error::{Error, Result};
pub use geometry::{
    error_measures, level_set_halfspaces, sample_weakest, weakest_type_cg, weakest_type_lp,
    ErrorMeasures, LinearConstraint, PartitionPredictor, Polytope, Predictor, WeakestTypeResult,
};
pub use lp::Relation;
pub use mechanisms::{
    groves_optimal_pivot, mechanism_generalized, mechanism_zeta_lambda, mechanism_zeta_zero,
    subspace_mechanism, vcg, weakest_type_am, weakest_type_vcg, AmParams, MechanismSpec,
    PriorModel, SubspaceSpec, TuningParams,
};
pub use streams::TrialStreams;
