use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{OptimizerConfig, Parameters, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};
use crate::zoo::{fit, infer, EpochStats, Forward, Network, Targets, TrainConfig};

/// A named contiguous column range of the attack input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl Branch {
    pub fn new(name: &str, start: usize, end: usize) -> Self {
        Branch {
            name: name.to_string(),
            start,
            end,
        }
    }

    pub fn width(&self) -> usize {
        self.end - self.start
    }
}

/// Multi-branch perceptron: every branch is a ReLU stack over its own
/// columns, the branch outputs are concatenated and fed to a dense head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackNet {
    pub branches: Vec<Branch>,
    pub branch_layers: Vec<usize>,
    pub head_layers: Vec<usize>,
}

impl AttackNet {
    pub fn input_width(&self) -> usize {
        self.branches.iter().map(|b| b.end).max().unwrap_or(0)
    }

    pub fn num_outputs(&self) -> usize {
        *self.head_layers.last().expect("head has an output layer")
    }

    fn validate(&self) -> Result<()> {
        if self.branches.is_empty() || self.head_layers.is_empty() {
            return Err(Error::Config("attack net needs a branch and a head".into()));
        }
        if self.branches.iter().any(|b| b.end <= b.start) {
            return Err(Error::Config("attack branch has no columns".into()));
        }
        Ok(())
    }

    fn dense_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut concat = 0;
        for (bi, b) in self.branches.iter().enumerate() {
            let mut width = b.width();
            for (j, &units) in self.branch_layers.iter().enumerate() {
                out.push((format!("branch{bi}.{j}"), width, units));
                width = units;
            }
            concat += width;
        }
        let mut width = concat;
        for (j, &units) in self.head_layers.iter().enumerate() {
            out.push((format!("head.{j}"), width, units));
            width = units;
        }
        out
    }
}

fn dense(tape: &mut Tape, params: &[Var], cursor: &mut usize, x: Var) -> Result<Var> {
    let (w, b) = params
        .get(*cursor..*cursor + 2)
        .map(|p| (p[0], p[1]))
        .ok_or_else(|| Error::Dimension("attack net ran out of parameters".into()))?;
    *cursor += 2;
    let z = tape.matmul(x, w)?;
    tape.add_row_bias(z, b)
}

impl Network for AttackNet {
    fn init_params(&self, seed: u64) -> Result<Parameters> {
        self.validate()?;
        let mut rng = rng(seed);
        let mut params = Parameters::new();
        for (name, fan_in, units) in self.dense_shapes() {
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * units)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            params.insert(
                format!("{name}.weight"),
                Tensor::new(vec![fan_in, units], data)?,
            )?;
            params.insert(format!("{name}.bias"), Tensor::zeros(vec![units]))?;
        }
        Ok(params)
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], input: Var) -> Result<Forward> {
        let mut cursor = 0;
        let mut outs = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let mut x = tape.columns(input, b.start, b.end)?;
            for _ in &self.branch_layers {
                let z = dense(tape, params, &mut cursor, x)?;
                x = tape.relu(z);
            }
            outs.push(x);
        }
        let mut x = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)?
        };
        let last = self.head_layers.len() - 1;
        for j in 0..=last {
            x = dense(tape, params, &mut cursor, x)?;
            if j < last {
                x = tape.relu(x);
            }
        }
        Ok(Forward {
            logits: x,
            embedding: None,
        })
    }

    fn sample_shape(&self) -> Vec<usize> {
        vec![self.input_width()]
    }
}

/// Hyperparameters shared by every attack classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for AttackConfig {
    /// Width 64, Adam at 1e-3, 50 epochs, batch 64.
    fn default() -> Self {
        AttackConfig {
            width: 64,
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackVariant {
    MiaBlackbox,
    MiaWhitebox,
    Attribute,
}

/// A trained attack classifier together with its input schema and the
/// column standardization fitted on its training features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackModel {
    pub variant: AttackVariant,
    pub net: AttackNet,
    pub params: Parameters,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub history: Vec<EpochStats>,
}

impl AttackModel {
    pub fn schema(&self) -> &[Branch] {
        &self.net.branches
    }

    fn standardize(&self, features: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if features.rank() != 2 || features.row_len() != d {
            return Err(Error::Dimension(format!(
                "attack expects {d} feature columns, got shape {:?}",
                features.shape()
            )));
        }
        let mut out = features.clone();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    /// Class posteriors of the attack classifier.
    pub fn predict_proba(&self, features: &Tensor) -> Result<Tensor> {
        Ok(infer(&self.net, &self.params, &self.standardize(features)?)?.posteriors())
    }

    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        Ok(
            infer(&self.net, &self.params, &self.standardize(features)?)?
                .logits
                .argmax_rows(),
        )
    }

    pub fn accuracy(&self, features: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() || labels.len() != features.rows() {
            return Err(Error::Size(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        let preds = self.predict(features)?;
        Ok(preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
    }
}

/// One shift and scale per branch, shared by all of its columns.
fn branch_stats(features: &Tensor, branches: &[Branch]) -> (Vec<f64>, Vec<f64>) {
    let n = features.rows();
    let d = features.row_len();
    let (mut mean, mut scale) = (vec![0.0; d], vec![1.0; d]);
    for b in branches {
        let count = (n * (b.end - b.start)) as f64;
        let values = || (0..n).flat_map(|i| features.row(i)[b.start..b.end].iter().copied());
        let m = values().sum::<f64>() / count;
        let sd = (values().map(|v| (v - m) * (v - m)).sum::<f64>() / count).sqrt();
        mean[b.start..b.end].fill(m);
        scale[b.start..b.end].fill(if sd > 1e-12 { sd } else { 1.0 });
    }
    (mean, scale)
}

pub(crate) fn train_attack(
    variant: AttackVariant,
    net: AttackNet,
    features: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackModel> {
    if features.rank() != 2 || features.rows() == 0 {
        return Err(Error::Size("attack training set is empty".into()));
    }
    if features.row_len() != net.input_width() {
        return Err(Error::Dimension(format!(
            "schema covers {} columns, features have {}",
            net.input_width(),
            features.row_len()
        )));
    }
    let (mean, scale) = branch_stats(features, &net.branches);
    let mut model = AttackModel {
        variant,
        params: net.init_params(derive_seed(seed, "attack/init"))?,
        net,
        mean,
        scale,
        history: Vec::new(),
    };
    let train_cfg = TrainConfig {
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        optimizer: OptimizerConfig::adam(cfg.learning_rate),
        shuffle_seed: derive_seed(seed, "attack/shuffle"),
    };
    let x = model.standardize(features)?;
    let (params, history) = fit(
        &model.net,
        model.params.clone(),
        &x,
        Targets::Hard(labels),
        &train_cfg,
    )?;
    model.params = params;
    model.history = history;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> AttackNet {
        AttackNet {
            branches: vec![Branch::new("a", 0, 2), Branch::new("b", 2, 4)],
            branch_layers: vec![8, 8],
            head_layers: vec![8, 8, 8, 2],
        }
    }

    #[test]
    fn parameter_layout() {
        let p = net().init_params(1).unwrap();
        assert_eq!(p.len(), 2 * (2 * 2 + 4));
        assert_eq!(p.get("branch0.0.weight").unwrap().shape(), &[2, 8]);
        assert_eq!(p.get("head.0.weight").unwrap().shape(), &[16, 8]);
        assert_eq!(p.get("head.3.bias").unwrap().shape(), &[2]);
    }

    #[test]
    fn learns_a_separable_rule() {
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let t = i as f64 / 200.0;
                vec![t, 1.0 - t, (i % 7) as f64, (i % 2) as f64 * 100.0]
            })
            .collect();
        let labels: Vec<usize> = (0..200).map(|i| usize::from(i >= 100)).collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let m = train_attack(
            AttackVariant::MiaBlackbox,
            net(),
            &x,
            &labels,
            &AttackConfig::default(),
            3,
        )
        .unwrap();
        assert!(m.accuracy(&x, &labels).unwrap() > 0.95);
    }

    #[test]
    fn branches_share_one_shift_and_scale() {
        let x = Tensor::from_rows(&[vec![0.0, 2.0, 5.0], vec![2.0, 4.0, 5.0]]).unwrap();
        let (m, s) = branch_stats(&x, &[Branch::new("a", 0, 2), Branch::new("b", 2, 3)]);
        assert_eq!(m, vec![2.0, 2.0, 5.0]);
        assert_eq!(s, vec![2f64.sqrt(), 2f64.sqrt(), 1.0]);
    }
}
