//! Dataset ingestion, synthetic generation and the four-way split.

mod complexity;
mod dataset;
mod idx;
mod split;
mod synth;

pub use complexity::{
    complexity_rank, nearest_neighbor_accuracy, WEIGHT_CHANNELS, WEIGHT_CLASSES, WEIGHT_NN_ERROR,
};
pub use dataset::{LabeledDataset, IMAGE_SIZE};
pub use idx::{
    decode_images, decode_labels, encode_images, encode_labels, load_idx, parse_idx, IdxImages,
    IMAGE_MAGIC, LABEL_MAGIC,
};
pub use split::{four_way_split, partial_subset, subset_size, FourWaySplit};
pub use synth::{synth_generate, SynthSpec};
