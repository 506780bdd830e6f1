//! Confidence-level allocation for aggregating conformal prediction sets.
//!
//! Several nonconformity scores each yield a conformal set; intersecting
//! them at per-score miscoverage levels that sum to the target keeps the
//! coverage guarantee. The allocation is tuned to minimize the measure of
//! the intersection.

pub mod allocation;
pub mod cola;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod localized;
pub mod quantiles;
pub mod scores;
pub mod sets;

pub use error::{Error, Result};
