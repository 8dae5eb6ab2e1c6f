//! Probability-level model fusion.
//!
//! Combines per-model class-probability matrices by plain averaging, by
//! accuracy-optimal convex weighting, or by stacking a meta-learner on the
//! concatenated probabilities; scores the results; and accounts for the energy
//! and carbon cost of producing them.

pub mod dataset;
pub mod energy;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod stacking;
pub mod synthetic;

pub use error::{Error, Result};
