//! SGD with heavy-ball momentum and bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::Parameters;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Hyperparameters for either optimizer. SGD ignores the Adam moments and
/// Adam ignores `momentum`; both fold `weight_decay·θ` into the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            momentum,
            weight_decay,
            ..Self::adam(learning_rate)
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer config {self:?}")))
        }
    }
}

/// Per-parameter velocity buffers for SGD.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
}

/// First and second moment estimates plus the last completed step index.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn step_count(&self) -> u64 {
        self.t
    }
}

fn check_grads<'a>(params: &Parameters, grads: &'a [Option<Vec<f64>>]) -> Result<Vec<&'a [f64]>> {
    if grads.len() != params.len() {
        return Err(Error::State(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    params
        .iter()
        .zip(grads)
        .map(|((name, t), g)| match g {
            None => Err(Error::State(format!("missing gradient for {name}"))),
            Some(g) if g.len() != t.len() => Err(Error::State(format!(
                "gradient for {name} has length {}, expected {}",
                g.len(),
                t.len()
            ))),
            Some(g) => Ok(g.as_slice()),
        })
        .collect()
}

fn ensure_buffers(bufs: &mut Vec<Vec<f64>>, params: &Parameters) {
    if bufs.len() != params.len() {
        *bufs = params.tensors().map(|t| vec![0.0; t.len()]).collect();
    }
}

/// `v ← μ·v + (g + λ·θ)`, `θ ← θ − η·v`.
pub fn sgd_step(
    params: &mut Parameters,
    grads: &[Option<Vec<f64>>],
    cfg: &OptimizerConfig,
    state: &mut SgdState,
) -> Result<()> {
    let grads = check_grads(params, grads)?;
    ensure_buffers(&mut state.velocity, params);
    for ((theta, g), vel) in params.tensors_mut().zip(grads).zip(&mut state.velocity) {
        for ((w, &gi), v) in theta.data_mut().iter_mut().zip(g).zip(vel.iter_mut()) {
            let g_eff = gi + cfg.weight_decay * *w;
            *v = cfg.momentum * *v + g_eff;
            *w -= cfg.learning_rate * *v;
        }
    }
    Ok(())
}

/// One Adam update; `t` must be exactly one more than the previous call.
pub fn adam_step(
    params: &mut Parameters,
    grads: &[Option<Vec<f64>>],
    cfg: &OptimizerConfig,
    state: &mut AdamState,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::State("adam step index starts at 1".into()));
    }
    if t != state.t + 1 {
        return Err(Error::State(format!(
            "adam step index {t} does not follow {}",
            state.t
        )));
    }
    let grads = check_grads(params, grads)?;
    ensure_buffers(&mut state.m, params);
    ensure_buffers(&mut state.v, params);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((theta, g), m), v) in params
        .tensors_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((w, &gi), mi), vi) in theta
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let g_eff = gi + cfg.weight_decay * *w;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g_eff;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g_eff * g_eff;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    state.t = t;
    Ok(())
}

#[derive(Clone, Debug)]
enum State {
    Sgd(SgdState),
    Adam(AdamState),
}

/// Config plus state, stepping whichever optimizer the config names.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    state: State,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        let state = match cfg.kind {
            OptimizerKind::Sgd => State::Sgd(SgdState::default()),
            OptimizerKind::Adam => State::Adam(AdamState::default()),
        };
        Ok(Optimizer { cfg, state })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &[Option<Vec<f64>>]) -> Result<()> {
        match &mut self.state {
            State::Sgd(s) => sgd_step(params, grads, &self.cfg, s),
            State::Adam(s) => {
                let t = s.t + 1;
                adam_step(params, grads, &self.cfg, s, t)
            }
        }
    }
}
