use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::rng;

use super::dataset::LabeledDataset;

/// Four equal, disjoint quarters of one source dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct FourWaySplit {
    /// Trains every target model; members for MIA evaluation.
    pub target_train: LabeledDataset,
    /// Measures target generalization; non-members for MIA evaluation and
    /// held-out data for attribute inference and stealing.
    pub target_test: LabeledDataset,
    /// Trains shadow models.
    pub shadow_train: LabeledDataset,
    /// Non-member examples for attack-model training.
    pub shadow_test: LabeledDataset,
    pub seed: u64,
}

impl FourWaySplit {
    pub fn parts(&self) -> [&LabeledDataset; 4] {
        [
            &self.target_train,
            &self.target_test,
            &self.shadow_train,
            &self.shadow_test,
        ]
    }
}

/// Seeded shuffle, then contiguous quartering; the `N mod 4` leftover samples
/// are dropped so all four parts are exactly equal.
pub fn four_way_split(ds: &LabeledDataset, seed: u64) -> Result<FourWaySplit> {
    if ds.len() < 8 {
        return Err(Error::Size(format!(
            "four-way split needs at least 8 samples, got {}",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng(seed));
    let q = ds.len() / 4;
    let part = |k: usize| ds.select(&order[k * q..(k + 1) * q]);
    Ok(FourWaySplit {
        target_train: part(0),
        target_test: part(1),
        shadow_train: part(2),
        shadow_test: part(3),
        seed,
    })
}

/// Number of samples kept for a fraction: `floor(fraction·n)`, with a small
/// tolerance so products like `0.7·30` that land a hair under an integer
/// still round to it.
pub fn subset_size(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Uniform draw without replacement of `floor(fraction·N)` samples.
pub fn partial_subset(
    target_train: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let k = subset_size(target_train.len(), fraction);
    if k == 0 {
        return Err(Error::Size(format!(
            "fraction {fraction} of {} samples is empty",
            target_train.len()
        )));
    }
    let mut order: Vec<usize> = (0..target_train.len()).collect();
    order.shuffle(&mut rng(seed));
    order.truncate(k);
    Ok(target_train.select(&order))
}
