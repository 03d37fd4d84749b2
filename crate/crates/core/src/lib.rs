//! Combine survey datasets of different hierarchical depth into a single
//! pseudo-clustered three-level hierarchy, and fit weighted
//! (pseudo-maximum-likelihood) random-intercept linear mixed models with
//! cluster-robust variances.
//!
//! The crate is organised bottom-up:
//!
//! * [`hierarchy`]: dataset model, CSV ingestion, pseudo-cluster
//!   construction, weight rescaling and summaries.
//! * [`lmm`]: exact marginal (pseudo-)log-likelihoods and scores for two-
//!   and three-level Gaussian random-intercept models, a Gauss–Hermite
//!   quadrature cross-check and the block covariance of the combined sample.
//! * [`estimator`]: estimating-equation solvers, model-based and sandwich
//!   covariances, JSON reports.
//! * [`sim`]: finite-population generation, informative PPS/Poisson
//!   sampling and the Monte Carlo harness.

pub mod error;
pub mod estimator;
pub mod hierarchy;
pub mod lmm;
pub mod par;
pub mod sim;

pub use error::{Error, Result};
