//! Estimation of per-demographic-group annotation means from a large corpus
//! of LLM proxy labels plus a small, adaptively collected budget of human
//! annotations.
//!
//! The pipeline: proxy labels exist for every record; a sampling process
//! (uniform, or error-driven adaptive batches seeded by a uniform burn-in)
//! decides which records receive a human label, recording each record's
//! inclusion probability; group means are then estimated with an
//! inverse-probability-weighted rectifier on top of the proxy mean, with
//! bootstrap confidence intervals. A Monte Carlo harness measures coverage,
//! estimation error, and budget allocation across repeated trials, and a
//! synthetic generator drives robustness sweeps.

pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod numeric;
pub mod predictor;
pub mod sampling;
pub mod seeds;
pub mod synthetic;

pub use error::{PdiError, Result};
