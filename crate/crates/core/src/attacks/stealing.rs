use crate::data::LabeledDataset;
use crate::engine::{Parameters, Tensor};
use crate::error::{Error, Result};
use crate::threat::TargetAccess;
use crate::zoo::{fit, Architecture, Network, Targets, TrainConfig, TrainedModel};

/// Trains a surrogate on the target's posteriors for `aux` from a fresh
/// initialization.
pub fn steal_model(
    target: &TargetAccess<'_>,
    aux: &LabeledDataset,
    surrogate: &Architecture,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    let init = surrogate.init_params(seed)?;
    steal_model_with_init(target, aux, surrogate, init, cfg, seed)
}

pub fn steal_model_with_init(
    target: &TargetAccess<'_>,
    aux: &LabeledDataset,
    surrogate: &Architecture,
    init: Parameters,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    if aux.is_empty() {
        return Err(Error::Size("stealing needs at least one query".into()));
    }
    if surrogate.num_classes() != target.num_classes() {
        return Err(Error::Config(format!(
            "surrogate emits {} classes, target {}",
            surrogate.num_classes(),
            target.num_classes()
        )));
    }
    let soft = target.query(&aux.images)?.posteriors;
    let (params, history) = fit(surrogate, init, &aux.images, Targets::Soft(&soft), cfg)?;
    Ok(TrainedModel {
        architecture: surrogate.clone(),
        params,
        num_classes: surrogate.num_classes(),
        history,
        train_config: cfg.clone(),
        seed,
    })
}

/// Fraction of rows whose argmax agrees.
pub fn agreement_from_posteriors(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() || a.rank() != 2 {
        return Err(Error::Dimension(format!(
            "cannot compare {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::Size("agreement over an empty set".into()));
    }
    let same = a
        .argmax_rows()
        .into_iter()
        .zip(b.argmax_rows())
        .filter(|(x, y)| x == y)
        .count();
    Ok(same as f64 / a.rows() as f64)
}

pub fn agreement(
    target: &TargetAccess<'_>,
    surrogate: &TrainedModel,
    eval: &Tensor,
) -> Result<f64> {
    agreement_from_posteriors(&target.query(eval)?.posteriors, &surrogate.predict(eval)?)
}
