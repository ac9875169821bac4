//! Sowing recommendations from blended weather forecasts, and observational
//! evaluation of their causal effect on crop yield.
//!
//! The crate is split along the pipeline:
//!
//! - [`weathergrid`]: forecast grids, daily aggregation, coarse/fine blending
//!   into 10-day high resolution forecasts, and forecast verification.
//! - [`sowing`]: the cotton sowing rule engine and daily recommendation maps.
//! - [`graph`]: causal DAG parsing, d-separation and back-door adjustment.
//! - [`dataset`]: field records, covariate engineering and the estimation matrix.
//! - [`estimators`]: propensity model, trimming and five ATE estimators with
//!   bootstrap confidence intervals.
//! - [`refutation`]: placebo, random common cause, subset removal and
//!   unobserved common cause checks.
//! - [`scm`]: a synthetic farm structural causal model with a do-intervention
//!   oracle.

pub mod config;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod estimators;
pub mod graph;
pub mod refutation;
pub mod rng;
pub mod scm;
pub mod sowing;
pub mod stats;
pub mod weathergrid;

pub use error::{Error, Result};

/// Offset between the Celsius and kelvin scales.
pub const KELVIN_OFFSET: f64 = 273.15;

/// Convert a Celsius reading to kelvin, the unit every grid value is stored in.
#[inline]
pub fn celsius_to_kelvin(c: f64) -> f64 {
    c + KELVIN_OFFSET
}

#[inline]
pub fn kelvin_to_celsius(k: f64) -> f64 {
    k - KELVIN_OFFSET
}
