use std::collections::HashSet;

use rand::seq::SliceRandom;

use crate::data::LabeledDataset;
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};
use crate::threat::{Access, Auxiliary, TargetAccess, ThreatModel};
use crate::zoo::{train, Architecture, TrainConfig, TrainedModel};

use super::net::{train_attack, AttackConfig, AttackModel, AttackNet, AttackVariant, Branch};

pub fn variant_for(threat: ThreatModel) -> AttackVariant {
    match threat.access {
        Access::BlackBox => AttackVariant::MiaBlackbox,
        Access::WhiteBox => AttackVariant::MiaWhitebox,
    }
}

/// Column layout of membership features for a `k`-class model whose final
/// dense layer has `grad_width` parameters.
pub fn membership_schema(variant: AttackVariant, k: usize, grad_width: usize) -> Vec<Branch> {
    match variant {
        AttackVariant::MiaBlackbox => vec![
            Branch::new("sorted_posteriors", 0, k),
            Branch::new("correct", k, k + 1),
        ],
        AttackVariant::MiaWhitebox => vec![
            Branch::new("sorted_posteriors", 0, k),
            Branch::new("loss", k, k + 1),
            Branch::new("last_layer_gradient", k + 1, k + 1 + grad_width),
            Branch::new("label_one_hot", k + 1 + grad_width, 2 * k + 1 + grad_width),
        ],
        AttackVariant::Attribute => panic!("attribute attacks have no membership schema"),
    }
}

/// One feature row per sample of `ds`, extracted through `access`.
pub fn membership_features(
    access: &TargetAccess<'_>,
    variant: AttackVariant,
    ds: &LabeledDataset,
) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = match variant {
        AttackVariant::MiaBlackbox => access
            .blackbox_features(&ds.images, &ds.class_labels)?
            .into_iter()
            .map(|f| {
                let mut r = f.sorted_posteriors;
                r.push(if f.correct { 1.0 } else { 0.0 });
                r
            })
            .collect(),
        AttackVariant::MiaWhitebox => access
            .whitebox_features(&ds.images, &ds.class_labels)?
            .into_iter()
            .map(|f| {
                let mut r = f.sorted_posteriors;
                r.push(f.loss);
                r.extend(f.last_layer_gradient);
                r.extend(f.label_one_hot);
                r
            })
            .collect(),
        AttackVariant::Attribute => {
            return Err(Error::Config(
                "attribute variant has no membership features".into(),
            ))
        }
    };
    Tensor::from_rows(&rows)
}

fn labeled_set(
    access: &TargetAccess<'_>,
    variant: AttackVariant,
    members: &LabeledDataset,
    nonmembers: &LabeledDataset,
) -> Result<(Tensor, Vec<usize>)> {
    let a = membership_features(access, variant, members)?;
    let b = membership_features(access, variant, nonmembers)?;
    let x = Tensor::concat_rows(&[&a, &b])?;
    let mut y = vec![1; members.len()];
    y.extend(std::iter::repeat_n(0, nonmembers.len()));
    Ok((x, y))
}

fn net_for(variant: AttackVariant, features: &Tensor, k: usize, cfg: &AttackConfig) -> AttackNet {
    let grad_width = match variant {
        AttackVariant::MiaWhitebox => features.row_len() - 2 * k - 1,
        _ => 0,
    };
    AttackNet {
        branches: membership_schema(variant, k, grad_width),
        branch_layers: vec![cfg.width; 2],
        head_layers: vec![cfg.width, cfg.width, cfg.width, 2],
    }
}

fn fit_membership(
    access: &TargetAccess<'_>,
    variant: AttackVariant,
    members: &LabeledDataset,
    nonmembers: &LabeledDataset,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackModel> {
    let (x, y) = labeled_set(access, variant, members, nonmembers)?;
    let net = net_for(variant, &x, access.num_classes(), cfg);
    train_attack(variant, net, &x, &y, cfg, seed)
}

fn require_auxiliary(threat: ThreatModel, want: Auxiliary) -> Result<()> {
    if threat.auxiliary == want {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "threat {threat} does not match this attack's auxiliary data"
        )))
    }
}

/// Attack training from an already trained shadow model: shadow_train rows
/// are members, shadow_test rows are non-members.
pub fn mia_train_on_shadow(
    shadow: &TrainedModel,
    shadow_train: &LabeledDataset,
    shadow_test: &LabeledDataset,
    threat: ThreatModel,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackModel> {
    require_auxiliary(threat, Auxiliary::Shadow)?;
    if shadow_train.len() != shadow_test.len() {
        return Err(Error::Balance(format!(
            "shadow halves differ in size: {} vs {}",
            shadow_train.len(),
            shadow_test.len()
        )));
    }
    // The adversary owns the shadow model, so it may always read its internals.
    let access = TargetAccess::new(
        shadow,
        ThreatModel::new(Access::WhiteBox, Auxiliary::Shadow),
    );
    fit_membership(
        &access,
        variant_for(threat),
        shadow_train,
        shadow_test,
        cfg,
        seed,
    )
}

/// Trains a shadow model with the target's architecture and training
/// configuration, then the attack classifier on it.
#[allow(clippy::too_many_arguments)]
pub fn mia_train_shadow(
    shadow_train: &LabeledDataset,
    shadow_test: &LabeledDataset,
    target_arch: &Architecture,
    target_cfg: &TrainConfig,
    threat: ThreatModel,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackModel> {
    require_auxiliary(threat, Auxiliary::Shadow)?;
    if shadow_train.len() != shadow_test.len() {
        return Err(Error::Balance(format!(
            "shadow halves differ in size: {} vs {}",
            shadow_train.len(),
            shadow_test.len()
        )));
    }
    let shadow = train(
        target_arch,
        shadow_train,
        target_cfg,
        derive_seed(seed, "shadow-model"),
    )?;
    mia_train_on_shadow(&shadow, shadow_train, shadow_test, threat, cfg, seed)
}

/// Attack training on features taken from the target itself: the partial
/// training data are members, an equal-size draw from `pool` non-members.
pub fn mia_train_partial(
    partial: &LabeledDataset,
    pool: &LabeledDataset,
    target: &TargetAccess<'_>,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackModel> {
    require_auxiliary(target.threat(), Auxiliary::Partial)?;
    let members: HashSet<usize> = partial.sample_ids.iter().copied().collect();
    if pool.sample_ids.iter().any(|id| members.contains(id)) {
        return Err(Error::Data(
            "non-member pool overlaps the partial training set".into(),
        ));
    }
    if pool.len() < partial.len() {
        return Err(Error::Balance(format!(
            "non-member pool has {} samples, need {}",
            pool.len(),
            partial.len()
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng(derive_seed(seed, "nonmember-draw")));
    order.truncate(partial.len());
    order.sort_unstable();
    let nonmembers = pool.select(&order);
    fit_membership(
        target,
        variant_for(target.threat()),
        partial,
        &nonmembers,
        cfg,
        seed,
    )
}

/// Balanced evaluation: the first `min(|train|, |test|)` samples of each
/// side, members from `target_train` and non-members from `target_test`.
pub fn mia_evaluate(
    attack: &AttackModel,
    target: &TargetAccess<'_>,
    target_train: &LabeledDataset,
    target_test: &LabeledDataset,
) -> Result<f64> {
    let n = target_train.len().min(target_test.len());
    if n == 0 {
        return Err(Error::Size(
            "membership evaluation needs members and non-members".into(),
        ));
    }
    let (x, y) = labeled_set(
        target,
        attack.variant,
        &target_train.truncate(n),
        &target_test.truncate(n),
    )?;
    attack.accuracy(&x, &y)
}
