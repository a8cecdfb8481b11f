//! Multiple membership multilevel models.
//!
//! Gaussian responses with one or more random classifications, where each
//! unit's contribution from a classification is a weighted sum of the
//! effects of the clusters it belongs to. The crate provides the design
//! types and weight constructors, a data simulator, a Gibbs sampler and an
//! exact marginal-likelihood fitter for small problems.

pub mod data;
pub mod design;
pub mod gibbs;
pub mod error;
pub mod exact;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod weights;

pub use data::{Classification, Dataset};
pub use design::{
    collapse_to_single_membership, normalize_weights, validate_design, weighted_cluster_covariate,
    Membership, MembershipDesign, ValidationReport, Violation, ViolationKind,
};
pub use error::{Error, ErrorKind, Result};
pub use model::{linear_predictor, ModelFrame, ModelSpec, Parameters};
