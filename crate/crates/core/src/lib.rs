//! Uncertainty-aware segmentation of large grayscale images: tiling,
//! Monte Carlo dropout prediction, entropy maps, curriculum tile
//! selection and reliability metrics.

pub mod curriculum;
pub mod error;
pub mod grid;
pub mod harness;
pub mod image;
pub mod io;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod pmap;
pub mod rng;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};
