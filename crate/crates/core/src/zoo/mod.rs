//! Model architectures, training and inference.

mod arch;
mod checkpoint;
mod model;
mod network;

pub use arch::{ArchKind, Architecture, Layer};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, FORMAT_VERSION,
};
pub use model::{accuracy, train, train_from, TrainedModel};
pub use network::{fit, infer, EpochStats, Forward, Inference, Network, Targets, TrainConfig};
