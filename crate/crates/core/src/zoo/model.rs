use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::engine::{Parameters, Tensor};
use crate::error::{Error, Result};

use super::arch::Architecture;
use super::network::{fit, infer, EpochStats, Network, Targets, TrainConfig};

/// A frozen classifier: architecture, parameters and how they were obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub architecture: Architecture,
    pub params: Parameters,
    pub num_classes: usize,
    pub history: Vec<EpochStats>,
    pub train_config: TrainConfig,
    pub seed: u64,
}

/// Trains `arch` on `ds` from a fresh initialization drawn with `seed`.
pub fn train(
    arch: &Architecture,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    let params = arch.init_params(seed)?;
    train_from(arch, params, ds, cfg, seed)
}

/// Trains starting from the given parameters instead of a fresh initialization.
pub fn train_from(
    arch: &Architecture,
    params: Parameters,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    if ds.is_empty() {
        return Err(Error::Size("training set is empty".into()));
    }
    if arch.num_classes() != ds.num_classes {
        return Err(Error::Config(format!(
            "architecture emits {} classes, dataset has {}",
            arch.num_classes(),
            ds.num_classes
        )));
    }
    let (params, history) = fit(
        arch,
        params,
        &ds.images,
        Targets::Hard(&ds.class_labels),
        cfg,
    )?;
    Ok(TrainedModel {
        architecture: arch.clone(),
        params,
        num_classes: ds.num_classes,
        history,
        train_config: cfg.clone(),
        seed,
    })
}

impl TrainedModel {
    /// Raw class scores before the softmax head.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(infer(&self.architecture, &self.params, batch)?.logits)
    }

    /// Softmax posteriors, one row per sample.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(infer(&self.architecture, &self.params, batch)?.posteriors())
    }

    pub fn predict_classes(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(self.logits(batch)?.argmax_rows())
    }

    /// Penultimate-layer activations (the input to the final dense layer).
    pub fn embedding(&self, batch: &Tensor) -> Result<Tensor> {
        if self.architecture.embedding_width().is_none() {
            return Err(Error::Capability(format!(
                "architecture {} has no dense hidden layer to embed from",
                self.architecture.name
            )));
        }
        infer(&self.architecture, &self.params, batch)?
            .embedding
            .ok_or_else(|| Error::Capability("no embedding produced".into()))
    }

    /// Fraction of samples whose top posterior is the true class.
    pub fn accuracy(&self, ds: &LabeledDataset) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::Size("accuracy of an empty dataset".into()));
        }
        let preds = self.predict_classes(&ds.images)?;
        let correct = preds
            .iter()
            .zip(&ds.class_labels)
            .filter(|(p, y)| p == y)
            .count();
        Ok(correct as f64 / ds.len() as f64)
    }
}

/// Accuracy of a free-standing model against `ds`; same as
/// [`TrainedModel::accuracy`].
pub fn accuracy(model: &TrainedModel, ds: &LabeledDataset) -> Result<f64> {
    model.accuracy(ds)
}
