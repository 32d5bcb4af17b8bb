//! Penalized least-squares model selection in `R^n` under sub-gamma noise.

pub mod bounds;
pub mod error;
pub mod harness;
pub mod linspace;
pub mod models;
pub mod noise;
pub mod select;

pub use error::{Error, Result};

/// Constant of the deviation inequalities.
pub const KAPPA: f64 = 18.0;
