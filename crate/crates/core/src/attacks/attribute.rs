use std::collections::HashSet;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::threat::TargetAccess;

use super::net::{train_attack, AttackConfig, AttackNet, AttackVariant, Branch};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttributeResult {
    pub accuracy: f64,
    /// Frequency of the most common attribute value in the holdout set.
    pub baseline: f64,
}

fn attributes<'d>(ds: &'d LabeledDataset, role: &str) -> Result<&'d [usize]> {
    ds.attribute_labels.as_deref().ok_or_else(|| {
        Error::Data(format!(
            "{role} set {} carries no attribute labels",
            ds.name
        ))
    })
}

/// Fits a two-layer perceptron from target embeddings to the attribute on
/// `aux` and scores it on `holdout`.
pub fn attribute_attack(
    target: &TargetAccess<'_>,
    aux: &LabeledDataset,
    holdout: &LabeledDataset,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttributeResult> {
    let train_attr = attributes(aux, "auxiliary")?;
    let test_attr = attributes(holdout, "holdout")?;
    let ids: HashSet<usize> = aux.sample_ids.iter().copied().collect();
    if holdout.sample_ids.iter().any(|id| ids.contains(id)) {
        return Err(Error::Data(
            "attribute holdout overlaps the auxiliary set".into(),
        ));
    }
    if aux.is_empty() || holdout.is_empty() {
        return Err(Error::Size(
            "attribute attack needs non-empty aux and holdout sets".into(),
        ));
    }
    let x_train = target.embedding(&aux.images)?;
    let x_test = target.embedding(&holdout.images)?;
    let values = train_attr
        .iter()
        .chain(test_attr)
        .max()
        .copied()
        .unwrap_or(0)
        + 1;
    let net = AttackNet {
        branches: vec![Branch::new("embedding", 0, x_train.row_len())],
        branch_layers: vec![cfg.width],
        head_layers: vec![values.max(2)],
    };
    let model = train_attack(
        AttackVariant::Attribute,
        net,
        &x_train,
        train_attr,
        cfg,
        seed,
    )?;
    let mut counts = vec![0usize; values];
    for &a in test_attr {
        counts[a] += 1;
    }
    Ok(AttributeResult {
        accuracy: model.accuracy(&x_test, test_attr)?,
        baseline: *counts.iter().max().expect("at least one value") as f64 / test_attr.len() as f64,
    })
}
