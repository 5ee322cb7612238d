//! Marginal models with individual-specific trajectory effects for longitudinal
//! bipartite (actor × event) networks.
//!
//! Each event is a binary participation vector over actors. The joint law is
//! described only through first-order effects (marginal logits, one per actor)
//! and second-order effects (pairwise log-odds ratios), both polynomial in the
//! scaled event time. Estimation maximizes the pairwise composite likelihood by
//! cyclic per-actor ascent; actors can then be grouped by maximizing a
//! classification version of the same objective.
//!
//! Module map:
//!
//! - [`model`]: time basis, actor parameters, marginal effect triples.
//! - [`margins`]: exact bivariate calculus (Dale inversion, log-linear maps, Jacobians).
//! - [`stats`]: event ingestion and sparse per-period sufficient statistics.
//! - [`likelihood`]: pairwise log-likelihood components and analytic scores.
//! - [`estimator`]: fixed-effects fitting.
//! - [`clustering`]: k-means, cluster-count selection, classification likelihood.
//! - [`simulator`]: exact small-n joints with prescribed effects, event sampling.
//! - [`io`]: event file readers and writers.

pub mod clustering;
pub mod error;
pub mod estimator;
pub mod io;
pub mod likelihood;
pub mod margins;
pub mod model;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
