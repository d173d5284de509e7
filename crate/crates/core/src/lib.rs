//! Bayesian spatio-temporal functional model with block structure and
//! repeated measures.

pub mod covariance;
pub mod design;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod model;
pub mod predict;
pub mod sampler;
pub mod selection;
pub mod simulate;

pub use error::{Error, Result};
