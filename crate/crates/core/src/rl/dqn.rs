use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::Transition;
use crate::policy::{argmax, QNetwork};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss {loss} (largest |Q| {max_q}, largest |reward| {max_reward})")]
    NonFinite { loss: f64, max_q: f64, max_reward: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Parameter update rule with its running state.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64, m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                m: vec![0.0; params],
                v: vec![0.0; params],
                t: 0,
            },
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for k in 0..params.len() {
                    m[k] = *beta1 * m[k] + (1.0 - *beta1) * grad[k];
                    v[k] = *beta2 * v[k] + (1.0 - *beta2) * grad[k] * grad[k];
                    params[k] -= *lr * (m[k] / c1) / ((v[k] / c2).sqrt() + *eps);
                }
            }
        }
    }
}

/// `r + γ·max_a' Q_target(s', a')`, without bootstrap on terminal transitions.
pub fn td_target(target: &QNetwork, t: &Transition, gamma: f64) -> f64 {
    if t.terminal {
        return t.reward;
    }
    let q = target.forward(&t.next_state).expect("state dimension matches network");
    t.reward + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Mean squared TD error of the online network over `batch`.
pub fn td_loss(net: &QNetwork, target: &QNetwork, batch: &[&Transition], gamma: f64) -> f64 {
    let sum: f64 = batch
        .iter()
        .map(|t| {
            let q = net.forward(&t.state).expect("state dimension matches network")[t.action];
            (q - td_target(target, t, gamma)).powi(2)
        })
        .sum();
    sum / batch.len() as f64
}

/// Loss and its gradient with respect to the online parameters (targets held fixed).
pub fn loss_and_gradient(net: &QNetwork, target: &QNetwork, batch: &[&Transition], gamma: f64) -> (f64, Vec<f64>) {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; net.params().len()];
    let mut loss = 0.0;
    let mut d_out = vec![0.0; net.action_count()];
    for t in batch {
        let trace = net.forward_trace(&t.state).expect("state dimension matches network");
        let err = trace.output()[t.action] - td_target(target, t, gamma);
        loss += err * err;
        d_out.iter_mut().for_each(|d| *d = 0.0);
        d_out[t.action] = 2.0 * err / n;
        net.accumulate_gradient(&trace, &d_out, &mut grad);
    }
    (loss / n, grad)
}

/// One optimiser step on the mean squared TD error. Returns the pre-step loss;
/// on a non-finite loss the network is left untouched.
pub fn gradient_step(
    net: &mut QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
    optimizer: &mut Optimizer,
) -> Result<f64, StepError> {
    if batch.is_empty() {
        return Err(StepError::EmptyBatch);
    }
    let (loss, grad) = loss_and_gradient(net, target, batch, gamma);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        let max_q = batch
            .iter()
            .filter_map(|t| net.forward(&t.state).ok())
            .flatten()
            .fold(0.0, |a: f64, q| a.max(q.abs()));
        let max_reward = batch.iter().fold(0.0, |a: f64, t| a.max(t.reward.abs()));
        return Err(StepError::NonFinite { loss, max_q, max_reward });
    }
    optimizer.apply(net.params_mut(), &grad);
    Ok(loss)
}

/// Linear decay from `start` to `end` over `decay_steps` decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        Self { start: eps, end: eps, decay_steps: 0 }
    }

    pub fn at(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.decay_steps as f64
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.start) && (0.0..=1.0).contains(&self.end)
    }
}

/// ε-greedy action index; greedy ties go to the smaller hold.
pub fn select_action<R: Rng + ?Sized>(net: &QNetwork, state: &[f64], eps: f64, rng: &mut R) -> usize {
    if eps > 0.0 && rng.random::<f64>() < eps {
        return rng.random_range(0..net.action_count());
    }
    let q = net.forward(state).expect("state dimension matches network");
    argmax(&q).unwrap_or(0)
}
