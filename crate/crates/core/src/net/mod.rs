//! Segmentation network, losses, optimizer and training loops.

pub mod adam;
pub mod losses;
pub mod predict;
pub mod real;
pub mod state;
pub mod train;
pub mod unet;

pub use adam::Adam;
pub use losses::{LossKind, LossParams};
pub use predict::{mc_predict, mc_predict_with};
pub use real::Real;
pub use state::ModelState;
pub use train::{train_method2, train_stage, EpochRecord, Phase, TrainConfig, TrainOutcome, TrainSample, UncertaintySource};
pub use unet::{Dropout, NetConfig, UNet};
