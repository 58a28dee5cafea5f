//! Bayesian scalar-on-network regression.
//!
//! Networks are modelled as `Yᵢ = U Λᵢ Uᵀ + noise` with a shared orthonormal
//! basis `U`, and a scalar outcome is regressed on the subject loadings `λᵢ`
//! plus covariates. Two posterior samplers are provided: a joint
//! Metropolis-adjusted Langevin within Gibbs sampler and a two-stage sampler
//! that learns the basis from the networks alone.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod evaluate;
pub mod gibbs;
pub mod io;
pub mod mala;
pub mod marginal;
pub mod model;
pub mod numerics;
pub mod sampler;
pub mod simulate;
pub mod twostage;

pub use error::{BsnError, Result};
