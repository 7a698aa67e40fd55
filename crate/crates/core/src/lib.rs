//! Train small image classifiers and measure how much they leak through
//! membership inference, attribute inference and model stealing.

pub mod attacks;
pub mod data;
pub mod engine;
mod error;
pub mod eval;
pub mod pipeline;
pub mod seed;
pub mod threat;
pub mod zoo;

pub use data::{FourWaySplit, LabeledDataset, SynthSpec};
pub use engine::{OptimizerConfig, Parameters, Tensor};
pub use error::{Error, Result};
pub use threat::{TargetAccess, ThreatModel};
pub use zoo::{Architecture, TrainConfig, TrainedModel};
