//! Uncertainty-driven sub-image selection and the staged retraining loop.

pub mod plan;
pub mod runner;

pub use plan::*;
pub use runner::*;
