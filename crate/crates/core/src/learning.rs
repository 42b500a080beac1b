//! Local SGD and ideal (noiseless, unmasked) federated averaging.

use crate::error::{Error, Result};
use crate::objective::{DataShard, Objective, Sample};
use crate::vector::ModelVector;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;

/// Learning-rate schedule hook. Experiments use a constant rate; the
/// inverse-square-root option matches the rate the convergence analysis
/// plugs in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// eta_t = eta / sqrt(t + 1)
    InvSqrt,
}

/// Run-level hyperparameters shared by every scheme.
#[derive(Debug, Clone)]
pub struct HyperParams {
    pub eta: f64,
    pub local_steps: usize,
    pub rounds: usize,
    pub devices: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
}

impl HyperParams {
    pub fn new(eta: f64, local_steps: usize, rounds: usize, devices: usize, batch_size: usize, seed: u64) -> Self {
        HyperParams {
            eta,
            local_steps,
            rounds,
            devices,
            batch_size,
            seed,
            schedule: LrSchedule::Constant,
        }
    }

    pub fn eta_at(&self, round: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.eta,
            LrSchedule::InvSqrt => self.eta / ((round + 1) as f64).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.eta)));
        }
        for (name, v) in [
            ("local_steps", self.local_steps),
            ("rounds", self.rounds),
            ("devices", self.devices),
            ("batch_size", self.batch_size),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1, got {v}")));
            }
        }
        Ok(())
    }
}

/// Mini-batch gradient: mean of per-sample gradients over `batch`.
pub fn stochastic_gradient(
    objective: &Objective,
    theta: &ModelVector,
    batch: &[&Sample],
) -> Result<ModelVector> {
    if batch.is_empty() {
        return Err(Error::Config("mini-batch is empty".into()));
    }
    let mut g = vec![0.0; theta.len()];
    let w = 1.0 / batch.len() as f64;
    for s in batch {
        objective.accumulate_sample_grad(theta.as_slice(), s, w, &mut g);
    }
    let g = ModelVector::from_vec(g);
    g.ensure_finite("stochastic_gradient")?;
    Ok(g)
}

/// Result of one device's local pass: the model difference it would report
/// plus the largest stochastic-gradient norm seen (feeds the measured
/// gradient-bound B used by the memory and power-scaling checks).
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub delta: ModelVector,
    pub max_grad_norm: f64,
}

/// Q steps of mini-batch SGD from `theta_global`; returns
/// `delta = theta_global - theta_after_Q`. A fresh batch is drawn from
/// `rng` at every local step, without replacement within the batch.
/// Deterministic given the stream.
pub fn local_sgd_round(
    objective: &Objective,
    shard: &DataShard,
    theta_global: &ModelVector,
    eta: f64,
    local_steps: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LocalUpdate> {
    shard.ensure_non_empty()?;
    theta_global.ensure_finite("local_sgd_round input")?;

    let n = shard.samples.len();
    let m = batch_size.min(n);
    let mut theta = theta_global.clone();
    let mut max_grad_norm: f64 = 0.0;

    for step in 0..local_steps {
        let picks = index::sample(rng, n, m);
        let batch: Vec<&Sample> = picks.iter().map(|i| &shard.samples[i]).collect();
        let grad = stochastic_gradient(objective, &theta, &batch).map_err(|e| match e {
            Error::Numerical(msg) => {
                Error::Numerical(format!("local step {step}: {msg}"))
            }
            other => other,
        })?;
        max_grad_norm = max_grad_norm.max(grad.norm_sq().sqrt());
        for (t, g) in theta.values.iter_mut().zip(&grad.values) {
            *t -= eta * g;
        }
    }

    let delta = ModelVector::from_vec(
        theta_global
            .values
            .iter()
            .zip(&theta.values)
            .map(|(a, b)| a - b)
            .collect(),
    );
    delta.ensure_finite("local_sgd_round delta")?;
    Ok(LocalUpdate {
        delta,
        max_grad_norm,
    })
}

/// Arithmetic mean of the payload vectors, summed in ascending device
/// order. Shared by the ideal aggregator and the over-the-air server
/// estimate so the two paths agree bitwise when the channel is transparent.
pub fn average_payloads(payloads: &[ModelVector]) -> Result<ModelVector> {
    let first = payloads
        .first()
        .ok_or_else(|| Error::Config("no payloads to aggregate".into()))?;
    let dim = first.len();
    let mut sum = vec![0.0; dim];
    for p in payloads {
        p.check_len(dim)?;
        for (s, v) in sum.iter_mut().zip(&p.values) {
            *s += v;
        }
    }
    let inv_k = 1.0 / payloads.len() as f64;
    for s in sum.iter_mut() {
        *s *= inv_k;
    }
    Ok(ModelVector::from_vec(sum))
}

/// Ideal FedAvg step: `theta - mean_k(delta_k)`.
pub fn fedavg_update(theta: &ModelVector, deltas: &[ModelVector]) -> Result<ModelVector> {
    let mean = average_payloads(deltas)?;
    mean.check_len(theta.len())?;
    let next = theta
        .values
        .iter()
        .zip(&mean.values)
        .map(|(t, m)| t - m)
        .collect();
    Ok(ModelVector::from_vec(next))
}

/// Global loss `(1/K) sum_k f_k(theta)` and squared norm of the full-data
/// global gradient.
pub fn eval_loss_and_gradnorm(
    objective: &Objective,
    theta: &ModelVector,
    shards: &[DataShard],
) -> (f64, f64) {
    eval_loss_and_gradnorm_refs(objective, theta, shards.iter())
}

/// Borrowing form of [`eval_loss_and_gradnorm`] for callers that hold the
/// shards behind other owners.
pub fn eval_loss_and_gradnorm_refs<'a>(
    objective: &Objective,
    theta: &ModelVector,
    shards: impl Iterator<Item = &'a DataShard> + Clone,
) -> (f64, f64) {
    let k = shards.clone().count() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for shard in shards {
        let w = 1.0 / (k * shard.samples.len() as f64);
        for s in &shard.samples {
            loss += w * objective.sample_loss(theta.as_slice(), s);
            objective.accumulate_sample_grad(theta.as_slice(), s, w, &mut grad);
        }
    }
    (loss, crate::vector::norm_sq(&grad))
}
