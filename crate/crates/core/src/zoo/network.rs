use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::engine::{softmax_rows, Optimizer, OptimizerConfig, Parameters, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seed::rng;

/// Anything that maps a batch to class logits through the tape.
pub trait Network {
    fn init_params(&self, seed: u64) -> Result<Parameters>;

    /// `params` are the tape handles of the parameters in declaration order.
    fn forward(&self, tape: &mut Tape, params: &[Var], input: Var) -> Result<Forward>;

    /// Shape of one input sample (without the batch axis).
    fn sample_shape(&self) -> Vec<usize>;
}

pub struct Forward {
    pub logits: Var,
    /// Input to the final classification layer, when the network defines one.
    pub embedding: Option<Var>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    /// Batch 64, 100 epochs, SGD with lr 1e-3, momentum 0.9, weight decay 5e-4.
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 100,
            optimizer: OptimizerConfig::sgd(1e-3, 0.9, 5e-4),
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.optimizer.learning_rate = lr;
        self
    }

    pub fn with_shuffle_seed(mut self, seed: u64) -> Self {
        self.shuffle_seed = seed;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

pub enum Targets<'a> {
    /// One class index per sample.
    Hard(&'a [usize]),
    /// One probability row per sample.
    Soft(&'a Tensor),
}

impl Targets<'_> {
    fn len(&self) -> usize {
        match self {
            Targets::Hard(l) => l.len(),
            Targets::Soft(t) => t.rows(),
        }
    }

    fn class_of(&self, i: usize) -> usize {
        match self {
            Targets::Hard(l) => l[i],
            Targets::Soft(t) => crate::engine::argmax(t.row(i)),
        }
    }
}

fn check_input(net: &(impl Network + ?Sized), inputs: &Tensor) -> Result<()> {
    let want = net.sample_shape();
    if inputs.rank() == 0 || inputs.shape()[1..] != want[..] {
        return Err(Error::Dimension(format!(
            "batch shape {:?} does not match per-sample input {:?}",
            inputs.shape(),
            want
        )));
    }
    Ok(())
}

/// Mini-batch training with a per-epoch seeded shuffle.
pub fn fit(
    net: &(impl Network + ?Sized),
    mut params: Parameters,
    inputs: &Tensor,
    targets: Targets<'_>,
    cfg: &TrainConfig,
) -> Result<(Parameters, Vec<EpochStats>)> {
    check_input(net, inputs)?;
    let n = inputs.rows();
    if n == 0 {
        return Err(Error::Size("cannot train on an empty dataset".into()));
    }
    if targets.len() != n {
        return Err(Error::Consistency(format!(
            "{n} inputs but {} targets",
            targets.len()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut rng = rng(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let x = tape.leaf(inputs.select_rows(batch));
            let vars: Vec<Var> = params.tensors().map(|t| tape.param(t.clone())).collect();
            let out = net.forward(&mut tape, &vars, x)?;
            let loss = match &targets {
                Targets::Hard(labels) => {
                    let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                    tape.softmax_cross_entropy(out.logits, &ys)?
                }
                Targets::Soft(t) => tape.soft_cross_entropy(out.logits, &t.select_rows(batch))?,
            };
            let l = tape.value(loss).data()[0];
            if !l.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("loss became {l}"),
                });
            }
            loss_sum += l * batch.len() as f64;
            let preds = tape.value(out.logits).argmax_rows();
            correct += batch
                .iter()
                .zip(preds)
                .filter(|(&i, p)| targets.class_of(i) == *p)
                .count();
            tape.backward(loss)?;
            let grads: Vec<Option<Vec<f64>>> = vars
                .iter()
                .map(|&v| tape.grad(v).map(<[f64]>::to_vec))
                .collect();
            opt.step(&mut params, &grads)?;
        }
        if params.tensors().any(|t| !t.is_finite()) {
            return Err(Error::Training {
                epoch,
                reason: "parameters became non-finite".into(),
            });
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
        });
    }
    Ok((params, history))
}

/// Forward-only pass outputs for a whole input set.
pub struct Inference {
    pub logits: Tensor,
    pub embedding: Option<Tensor>,
}

impl Inference {
    pub fn posteriors(&self) -> Tensor {
        let k = self.logits.shape()[1];
        Tensor::new(
            self.logits.shape().to_vec(),
            softmax_rows(self.logits.data(), k),
        )
        .expect("softmax preserves shape")
    }
}

const INFERENCE_CHUNK: usize = 256;

pub fn infer(
    net: &(impl Network + ?Sized),
    params: &Parameters,
    inputs: &Tensor,
) -> Result<Inference> {
    check_input(net, inputs)?;
    let n = inputs.rows();
    if n == 0 {
        return Err(Error::Size("inference on an empty batch".into()));
    }
    let mut logits = Vec::new();
    let mut embeds: Option<Vec<Tensor>> = Some(Vec::new());
    for start in (0..n).step_by(INFERENCE_CHUNK) {
        let idx: Vec<usize> = (start..(start + INFERENCE_CHUNK).min(n)).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(inputs.select_rows(&idx));
        let vars: Vec<Var> = params.tensors().map(|t| tape.leaf(t.clone())).collect();
        let out = net.forward(&mut tape, &vars, x)?;
        logits.push(tape.value(out.logits).clone());
        match (out.embedding, embeds.as_mut()) {
            (Some(e), Some(list)) => list.push(tape.value(e).clone()),
            _ => embeds = None,
        }
    }
    let logits = Tensor::concat_rows(&logits.iter().collect::<Vec<_>>())?;
    let embedding = match embeds {
        Some(list) => Some(Tensor::concat_rows(&list.iter().collect::<Vec<_>>())?),
        None => None,
    };
    Ok(Inference { logits, embedding })
}
