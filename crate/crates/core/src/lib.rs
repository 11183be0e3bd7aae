//! balance-forge: covariate-balanced two-arm experimental design.
//!
//! The library allocates `2n` subjects into two equal arms by greedy
//! pair-switching (plus restricted, stratified, restarted, matched-pair and
//! rerandomization variants), quantifies how far any method departs from
//! complete randomization through pairwise entropy and deviation metrics,
//! verifies the collision-density theory behind the greedy rate by
//! quadrature, and performs permutation-based inference for the additive
//! treatment effect. A simulation harness regenerates the headline tables
//! and figures at desk or full scale.
//!
//! All numeric code is generic over the scalar type through [`Real`]
//! (`f32` or `f64`); the concrete aliases below pin the common
//! double-precision instantiation.

// `!(x > 0)` guards reject NaN along with nonpositive values; `x <= 0` would
// let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::manual_is_multiple_of)]

pub mod allocation;
pub mod balance;
pub mod data;
pub mod designs;
pub mod error;
pub mod inference;
pub mod kernels;
pub mod linalg;
pub mod optimal;
pub mod randomness;
pub mod scalar;
pub mod seeding;
pub mod simharness;

pub use allocation::{random_balanced_allocation, Allocation, DesignResult};
pub use data::{load_covariates, standardize, CovariateMatrix, StandardizedCovariates};
pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases for the main user-facing types.
pub type CovariateMatrix64 = CovariateMatrix<f64>;
pub type StandardizedCovariates64 = StandardizedCovariates<f64>;
pub type DesignResult64 = DesignResult<f64>;
pub type DesignMethod64 = designs::DesignMethod<f64>;
pub type ObjectiveKind64 = balance::ObjectiveKind<f64>;
