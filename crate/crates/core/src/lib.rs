//! Counterfactual inference in cyclic structural causal models.
//!
//! Structural equations with feedback loops need not have a unique solution,
//! so everything here revolves around one sufficient condition: if the
//! structural map is a global `ℓp`-contraction with constant kappa < 1, the
//! model (and every coordinate subset of it) is uniquely solvable, and that
//! property survives shift-scale interventions with scales in the unit
//! interval. On top of that condition the crate offers:
//!
//! - [`model`]: the SCM data model, validation, syntactic parents, and a
//!   bit-exact JSON file format ([`file`]);
//! - [`expr`]: the mechanism formula language;
//! - [`contraction`]: certified or sampled contraction constants;
//! - [`solver`]: Picard iteration with Banach stopping rules, closed-form
//!   linear-Gaussian solving, subset solving, abduction, and seeded
//!   observational sampling;
//! - [`intervention`]: the shift-scale algebra, hard `do` included, with
//!   composition into a single equivalent intervention;
//! - [`twin`]: twin models, exact counterfactual response maps,
//!   abduction-action-prediction, and shared-noise Monte Carlo;
//! - [`concentration`]: sub-Gaussian tail bounds for counterfactual
//!   functionals and their empirical validation.

pub mod concentration;
pub mod contraction;
pub mod error;
pub mod expr;
pub mod file;
pub mod intervention;
pub mod linalg;
pub mod model;
pub mod solver;
pub mod twin;

pub use concentration::{
    effective_sigma2_linear, effective_sigma2_twin, empirical_tail_check, tail_bound,
    verify_noise_lipschitz_linear, LipschitzFunctional, TailBoundSpec, TailCheckReport,
};
pub use contraction::{
    bound_expr_lipschitz, certify, certify_linear, estimate_kappa_sampled,
    kappa_after_intervention, CertificationMethod, ContractionCertificate,
};
pub use error::{Error, Result};
pub use expr::{parse_expr, ExprNode, SymbolTable};
pub use file::{load_model, model_to_json, parse_model, save_model};
pub use intervention::{
    apply_shift_scale, check_composition_bound, compose, do_intervention, Intervention, ShiftScale,
};
pub use linalg::{Matrix, NormIndex};
pub use model::{
    syntactic_parents, validate_model, LinearRow, Mechanism, NoiseSpec, ParentSet, ScmModel,
    StructuralMap, ValidationReport,
};
pub use solver::{
    abduct_noise_linear, iteration_bound, linear_moments, linear_solve, picard_solve,
    sample_observational, solve_subset, LinearMoments, SampleMatrix, SolveReport,
};
pub use twin::{
    build_twin, counterfactual_aap, counterfactual_map_linear, counterfactual_sample,
    intervene_twin, verify_twin_aap_equivalence, CounterfactualMap, TwinModel,
};
