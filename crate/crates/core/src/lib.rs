//! Differentially private estimation of weighted average treatment effects
//! (ATE, ATT, ATC) for binary outcomes.
//!
//! The private pipeline splits the data into random partitions, estimates a
//! truncated-propensity WATE and its variance in each, releases Laplace-noised
//! averages, and turns the noisy pair into a point estimate and 95% interval
//! by sampling the implied posteriors.

pub mod cli;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod pipeline;
pub mod posterior;
pub mod privacy;
pub mod propensity;
pub mod report;
pub mod rng;
pub mod simlab;
pub mod wate;

pub use error::{Error, FitError, Result};
