use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{check_label, Trace};
use super::{DenseNetwork, LossKind, NnError, Sample};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64, batch_size: usize) -> Self {
        Self { kind: OptimizerKind::SgdMomentum { momentum }, learning_rate, batch_size }
    }

    pub fn adam(learning_rate: f64, batch_size: usize) -> Self {
        Self { kind: OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }, learning_rate, batch_size }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidOptimizer(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } if !(0.0..1.0).contains(&momentum) => {
                bad("momentum must lie in [0, 1)")
            }
            OptimizerKind::Adam { beta1, beta2, epsilon }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || epsilon <= 0.0 =>
            {
                bad("adam betas must lie in [0, 1) and epsilon must be positive")
            }
            _ => Ok(()),
        }
    }
}

enum State {
    Sgd { momentum: f64, velocity: Vec<f64> },
    Adam { beta1: f64, beta2: f64, epsilon: f64, m: Vec<f64>, v: Vec<f64>, step: i32 },
}

impl State {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::SgdMomentum { momentum } => State::Sgd { momentum, velocity: vec![0.0; n] },
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                State::Adam { beta1, beta2, epsilon, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
            }
        }
    }

    fn apply(&mut self, lr: f64, params: &mut [f64], grad: &[f64]) {
        match self {
            State::Sgd { momentum, velocity } => {
                for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
                    *v = *momentum * *v - lr * g;
                    *p += *v;
                }
            }
            State::Adam { beta1, beta2, epsilon, m, v, step } => {
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step);
                let c2 = 1.0 - beta2.powi(*step);
                for i in 0..params.len() {
                    let g = grad[i];
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * g;
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + *epsilon);
                }
            }
        }
    }
}

/// Mini-batch trainer whose optimizer state persists across [`Trainer::epoch`] calls.
pub struct Trainer {
    net: DenseNetwork,
    opt: OptimizerConfig,
    loss: LossKind,
    state: State,
    grad: Vec<f64>,
    trace: Trace,
    rng: rand_chacha::ChaCha8Rng,
}

impl Trainer {
    pub fn new(net: DenseNetwork, opt: OptimizerConfig, loss: LossKind, rng_seed: u64) -> Result<Self, NnError> {
        opt.validate()?;
        let n = net.param_count();
        Ok(Self {
            state: State::new(opt.kind, n),
            grad: vec![0.0; n],
            trace: Trace::new(&net),
            rng: seed::rng(rng_seed),
            net,
            opt,
            loss,
        })
    }

    pub fn network(&self) -> &DenseNetwork {
        &self.net
    }

    pub fn into_network(self) -> DenseNetwork {
        self.net
    }

    /// One shuffled pass over `data`.
    pub fn epoch(&mut self, data: &[Sample]) -> Result<(), NnError> {
        if data.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let final_act = self.net.layers().last().map(|l| l.activation);
        for s in data {
            self.net.check_input(&s.features)?;
            check_label(&s.label, self.net.output_dim(), self.loss, final_act)?;
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        for chunk in order.chunks(self.opt.batch_size) {
            let batch = chunk.iter().map(|&i| &data[i]);
            self.net.accumulate_gradient(batch, self.loss, &mut self.grad, &mut self.trace)?;
            self.state.apply(self.opt.learning_rate, self.net.params_mut(), &self.grad);
        }
        if self.net.params().iter().any(|p| !p.is_finite()) {
            return Err(NnError::NonFinite("parameters after training"));
        }
        Ok(())
    }
}

/// Runs `epochs` full passes over `train_set` with seeded shuffling and mini-batches.
///
/// Optimizer state starts fresh on every call. With `epochs == 0` the network is
/// returned unchanged.
pub fn train_epochs(
    net: &DenseNetwork,
    train_set: &[Sample],
    epochs: usize,
    opt: &OptimizerConfig,
    loss: LossKind,
    rng_seed: u64,
) -> Result<DenseNetwork, NnError> {
    if epochs == 0 {
        return Ok(net.clone());
    }
    let mut trainer = Trainer::new(net.clone(), *opt, loss, rng_seed)?;
    for _ in 0..epochs {
        trainer.epoch(train_set)?;
    }
    Ok(trainer.into_network())
}
