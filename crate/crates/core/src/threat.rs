//! Threat models and the observation surface they grant an adversary.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{Parameters, Tape, Tensor};
use crate::error::{Error, Result};
use crate::zoo::{infer, TrainedModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    BlackBox,
    WhiteBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auxiliary {
    Partial,
    Shadow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ThreatModel {
    pub access: Access,
    pub auxiliary: Auxiliary,
}

impl ThreatModel {
    pub const ALL: [ThreatModel; 4] = [
        ThreatModel::new(Access::BlackBox, Auxiliary::Partial),
        ThreatModel::new(Access::BlackBox, Auxiliary::Shadow),
        ThreatModel::new(Access::WhiteBox, Auxiliary::Partial),
        ThreatModel::new(Access::WhiteBox, Auxiliary::Shadow),
    ];

    pub const fn new(access: Access, auxiliary: Auxiliary) -> Self {
        ThreatModel { access, auxiliary }
    }

    pub fn is_white_box(self) -> bool {
        self.access == Access::WhiteBox
    }
}

impl fmt::Display for ThreatModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = match self.access {
            Access::BlackBox => "black_box",
            Access::WhiteBox => "white_box",
        };
        let b = match self.auxiliary {
            Auxiliary::Partial => "partial",
            Auxiliary::Shadow => "shadow",
        };
        write!(f, "{a}/{b}")
    }
}

impl FromStr for ThreatModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ThreatModel::ALL
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown threat model {s:?}")))
    }
}

impl TryFrom<String> for ThreatModel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ThreatModel> for String {
    fn from(t: ThreatModel) -> String {
        t.to_string()
    }
}

/// Posteriors and predicted classes returned by a query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub posteriors: Tensor,
    pub classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlackBoxFeatures {
    pub sorted_posteriors: Vec<f64>,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WhiteBoxFeatures {
    pub sorted_posteriors: Vec<f64>,
    pub loss: f64,
    /// Final dense layer: weight gradient (row-major) followed by bias gradient.
    pub last_layer_gradient: Vec<f64>,
    pub label_one_hot: Vec<f64>,
}

pub fn sort_descending(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

pub fn one_hot(label: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    v
}

/// Read-only view of a frozen model restricted by a threat model.
#[derive(Clone, Copy)]
pub struct TargetAccess<'a> {
    model: &'a TrainedModel,
    threat: ThreatModel,
}

impl<'a> TargetAccess<'a> {
    pub fn new(model: &'a TrainedModel, threat: ThreatModel) -> Self {
        TargetAccess { model, threat }
    }

    pub fn threat(&self) -> ThreatModel {
        self.threat
    }

    pub fn num_classes(&self) -> usize {
        self.model.num_classes
    }

    pub fn query(&self, batch: &Tensor) -> Result<QueryResult> {
        let posteriors = self.model.predict(batch)?;
        let classes = posteriors.argmax_rows();
        Ok(QueryResult {
            posteriors,
            classes,
        })
    }

    pub fn blackbox_features(
        &self,
        batch: &Tensor,
        labels: &[usize],
    ) -> Result<Vec<BlackBoxFeatures>> {
        self.check_labels(batch, labels)?;
        let q = self.query(batch)?;
        Ok(labels
            .iter()
            .enumerate()
            .map(|(i, &y)| BlackBoxFeatures {
                sorted_posteriors: sort_descending(q.posteriors.row(i)),
                correct: q.classes[i] == y,
            })
            .collect())
    }

    fn require_white_box(&self, what: &str) -> Result<&'a TrainedModel> {
        if self.threat.is_white_box() {
            Ok(self.model)
        } else {
            Err(Error::Capability(format!(
                "{what} requires white-box access, threat is {}",
                self.threat
            )))
        }
    }

    /// Model parameters; white-box only.
    pub fn parameters(&self) -> Result<&'a Parameters> {
        Ok(&self.require_white_box("parameters")?.params)
    }

    /// Penultimate activations; white-box only.
    pub fn embedding(&self, batch: &Tensor) -> Result<Tensor> {
        self.require_white_box("embedding")?.embedding(batch)
    }

    /// Per-sample loss; white-box only.
    pub fn losses(&self, batch: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        Ok(self
            .whitebox_features(batch, labels)?
            .into_iter()
            .map(|f| f.loss)
            .collect())
    }

    /// Per-sample last-layer gradients; white-box only.
    pub fn gradients(&self, batch: &Tensor, labels: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .whitebox_features(batch, labels)?
            .into_iter()
            .map(|f| f.last_layer_gradient)
            .collect())
    }

    pub fn whitebox_features(
        &self,
        batch: &Tensor,
        labels: &[usize],
    ) -> Result<Vec<WhiteBoxFeatures>> {
        let model = self.require_white_box("white-box features")?;
        self.check_labels(batch, labels)?;
        let out = infer(&model.architecture, &model.params, batch)?;
        let embedding = out.embedding.as_ref().ok_or_else(|| {
            Error::Capability(format!(
                "architecture {} exposes no input to its final dense layer",
                model.architecture.name
            ))
        })?;
        let posteriors = out.posteriors();
        let (wname, bname) = model.architecture.last_layer_param_names();
        let w = model
            .params
            .get(&wname)
            .ok_or_else(|| Error::State(format!("missing parameter {wname}")))?;
        let b = model
            .params
            .get(&bname)
            .ok_or_else(|| Error::State(format!("missing parameter {bname}")))?;
        let k = self.num_classes();
        let width = embedding.row_len();
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let mut tape = Tape::new();
                let e = tape.leaf(Tensor::new(vec![1, width], embedding.row(i).to_vec())?);
                let wv = tape.param(w.clone());
                let bv = tape.param(b.clone());
                let z = tape.matmul(e, wv)?;
                let z = tape.add_row_bias(z, bv)?;
                let loss = tape.softmax_cross_entropy(z, &[y])?;
                tape.backward(loss)?;
                let mut grad = tape
                    .grad(wv)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; w.len()]);
                grad.extend(
                    tape.grad(bv)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; b.len()]),
                );
                Ok(WhiteBoxFeatures {
                    sorted_posteriors: sort_descending(posteriors.row(i)),
                    loss: tape.value(loss).data()[0],
                    last_layer_gradient: grad,
                    label_one_hot: one_hot(y, k),
                })
            })
            .collect()
    }

    fn check_labels(&self, batch: &Tensor, labels: &[usize]) -> Result<()> {
        if batch.rank() == 0 || batch.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} labels for a batch of shape {:?}",
                labels.len(),
                batch.shape()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.num_classes()) {
            return Err(Error::Index(format!(
                "label {y} outside {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, LabeledDataset, SynthSpec};
    use crate::engine::OptimizerConfig;
    use crate::zoo::{train, Architecture, TrainConfig};
    use proptest::prelude::*;

    fn data(per_class: usize, seed: u64) -> LabeledDataset {
        synth_generate(&SynthSpec {
            num_classes: 4,
            samples_per_class: per_class,
            channels: 1,
            class_separation: 4.0,
            noise_sigma: 0.3,
            attribute_strength: 0.0,
            seed,
        })
        .unwrap()
    }

    fn model(ds: &LabeledDataset, epochs: usize) -> TrainedModel {
        let cfg = TrainConfig {
            batch_size: 10,
            epochs,
            optimizer: OptimizerConfig::sgd(0.05, 0.9, 0.0),
            shuffle_seed: 1,
        };
        train(&Architecture::small_mlp(1, 4), ds, &cfg, 5).unwrap()
    }

    #[test]
    fn four_distinct_threat_models() {
        let names: std::collections::BTreeSet<String> =
            ThreatModel::ALL.iter().map(|t| t.to_string()).collect();
        assert_eq!(names.len(), 4);
        for t in ThreatModel::ALL {
            assert_eq!(t.to_string().parse::<ThreatModel>().unwrap(), t);
        }
    }

    #[test]
    fn blackbox_examples() {
        let p = [0.1, 0.7, 0.2];
        assert_eq!(sort_descending(&p), vec![0.7, 0.2, 0.1]);
        assert_eq!(one_hot(2, 4), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn query_identical_across_access_levels() {
        let ds = data(3, 1);
        let m = model(&ds, 2);
        let mut prev: Option<QueryResult> = None;
        for t in ThreatModel::ALL {
            let q = TargetAccess::new(&m, t).query(&ds.images).unwrap();
            assert_eq!(q.posteriors, m.predict(&ds.images).unwrap());
            for i in 0..q.posteriors.rows() {
                assert!((q.posteriors.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            if let Some(p) = &prev {
                assert_eq!(p, &q);
            }
            prev = Some(q);
        }
    }

    #[test]
    fn capability_matrix_is_enforced() {
        let ds = data(2, 2);
        let m = model(&ds, 1);
        for t in ThreatModel::ALL {
            let a = TargetAccess::new(&m, t);
            let results = [
                a.whitebox_features(&ds.images, &ds.class_labels).err(),
                a.embedding(&ds.images).err(),
                a.parameters().err(),
                a.losses(&ds.images, &ds.class_labels).err(),
                a.gradients(&ds.images, &ds.class_labels).err(),
            ];
            for r in results {
                match t.access {
                    Access::BlackBox => assert!(matches!(r, Some(Error::Capability(_)))),
                    Access::WhiteBox => assert!(r.is_none()),
                }
            }
            assert!(a.query(&ds.images).is_ok());
            assert!(a.blackbox_features(&ds.images, &ds.class_labels).is_ok());
        }
    }

    #[test]
    fn whitebox_feature_shapes_and_invariants() {
        let ds = data(3, 3);
        let m = model(&ds, 3);
        let a = TargetAccess::new(&m, ThreatModel::new(Access::WhiteBox, Auxiliary::Shadow));
        let f = a.whitebox_features(&ds.images, &ds.class_labels).unwrap();
        assert_eq!(f.len(), ds.len());
        for (fi, &y) in f.iter().zip(&ds.class_labels) {
            assert!(fi.sorted_posteriors.windows(2).all(|w| w[0] >= w[1]));
            assert!((fi.sorted_posteriors.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(fi.label_one_hot.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(fi.label_one_hot[y], 1.0);
            assert_eq!(fi.last_layer_gradient.len(), 128 * 4 + 4);
            assert!(fi.loss >= 0.0);
        }
        assert_eq!(
            f,
            a.whitebox_features(&ds.images, &ds.class_labels).unwrap()
        );
    }

    #[test]
    fn whitebox_matches_single_sample_training_gradient() {
        let ds = data(2, 4);
        let m = model(&ds, 1);
        let a = TargetAccess::new(&m, ThreatModel::new(Access::WhiteBox, Auxiliary::Partial));
        let f = a.whitebox_features(&ds.images, &ds.class_labels).unwrap();
        let (wn, bn) = m.architecture.last_layer_param_names();
        let names: Vec<&str> = m.params.names().collect();
        for i in [0, 5] {
            let mut tape = Tape::new();
            let x = tape.leaf(ds.images.select_rows(&[i]));
            let vars: Vec<_> = m.params.tensors().map(|t| tape.param(t.clone())).collect();
            let out = crate::zoo::Network::forward(&m.architecture, &mut tape, &vars, x).unwrap();
            let loss = tape
                .softmax_cross_entropy(out.logits, &[ds.class_labels[i]])
                .unwrap();
            tape.backward(loss).unwrap();
            let wi = names.iter().position(|n| *n == wn).unwrap();
            let bi = names.iter().position(|n| *n == bn).unwrap();
            let mut want = tape.grad(vars[wi]).unwrap().to_vec();
            want.extend_from_slice(tape.grad(vars[bi]).unwrap());
            for (g, w) in f[i].last_layer_gradient.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9);
            }
            assert!((f[i].loss - tape.value(loss).data()[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn memorized_samples_have_small_loss_and_gradient() {
        let ds = data(3, 5).select(&(0..10).collect::<Vec<_>>());
        let m = model(&ds, 300);
        assert_eq!(m.accuracy(&ds).unwrap(), 1.0);
        let a = TargetAccess::new(&m, ThreatModel::new(Access::WhiteBox, Auxiliary::Partial));
        for f in a.whitebox_features(&ds.images, &ds.class_labels).unwrap() {
            assert!(f.loss < 1e-2, "loss {}", f.loss);
            let norm = f
                .last_layer_gradient
                .iter()
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            assert!(norm < 0.1, "gradient norm {norm}");
        }
    }

    #[test]
    fn labels_are_checked() {
        let ds = data(2, 6);
        let m = model(&ds, 1);
        let a = TargetAccess::new(&m, ThreatModel::new(Access::BlackBox, Auxiliary::Partial));
        assert!(matches!(
            a.blackbox_features(&ds.images, &[0]),
            Err(Error::Consistency(_))
        ));
        let bad = vec![4; ds.len()];
        assert!(matches!(
            a.blackbox_features(&ds.images, &bad),
            Err(Error::Index(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn sorting_preserves_multiset(v in prop::collection::vec(0.0f64..1.0, 1..12)) {
            let s = sort_descending(&v);
            prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
            let mut a = v.clone();
            a.sort_by(f64::total_cmp);
            let mut b = s.clone();
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn sorting_forgets_label_alignment(v in prop::collection::vec(0.0f64..1.0, 2..8), r in 0usize..8) {
            let mut rotated = v.clone();
            let k = r % v.len();
            rotated.rotate_left(k);
            prop_assert_eq!(sort_descending(&v), sort_descending(&rotated));
        }
    }
}
