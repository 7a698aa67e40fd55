//! Ordinal dataset complexity.
//!
//! `score = (channels − 1)·1 + num_classes·0.1 + (1 − nn_accuracy)·2`, where
//! `nn_accuracy` is 1-nearest-neighbour accuracy of a fixed holdout against
//! the remaining samples. Only the ordering of scores is meaningful.

use super::dataset::LabeledDataset;

pub const WEIGHT_CHANNELS: f64 = 1.0;
pub const WEIGHT_CLASSES: f64 = 0.1;
pub const WEIGHT_NN_ERROR: f64 = 2.0;

const MAX_HOLDOUT: usize = 200;
const MAX_REFERENCE: usize = 800;

/// 1-NN accuracy: every fifth sample (up to 200) is held out and matched
/// against up to 800 of the others.
pub fn nearest_neighbor_accuracy(ds: &LabeledDataset) -> f64 {
    let (mut holdout, mut reference) = (Vec::new(), Vec::new());
    for i in 0..ds.len() {
        if i % 5 == 0 {
            if holdout.len() < MAX_HOLDOUT {
                holdout.push(i);
            }
        } else if reference.len() < MAX_REFERENCE {
            reference.push(i);
        }
    }
    if holdout.is_empty() || reference.is_empty() {
        return 1.0;
    }
    let correct = holdout
        .iter()
        .filter(|&&h| {
            let q = ds.images.row(h);
            let nearest = reference
                .iter()
                .map(|&r| {
                    let d: f64 = q
                        .iter()
                        .zip(ds.images.row(r))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, r)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, r)| r)
                .expect("reference set non-empty");
            ds.class_labels[nearest] == ds.class_labels[h]
        })
        .count();
    correct as f64 / holdout.len() as f64
}

pub fn complexity_rank(ds: &LabeledDataset) -> f64 {
    let channels = ds.channels() as f64;
    (channels - 1.0) * WEIGHT_CHANNELS
        + ds.num_classes as f64 * WEIGHT_CLASSES
        + (1.0 - nearest_neighbor_accuracy(ds)) * WEIGHT_NN_ERROR
}
