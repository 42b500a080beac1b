//! Transmit-signal construction and memory updates for the three
//! over-the-air schemes, plus the per-round driver.
//!
//! * no memory — transmit the raw scaled model difference;
//! * short-term memory — add back only the previous round's masked-out
//!   model difference, then forget it;
//! * long-term memory — accumulate every coordinate ever lost to masking
//!   and add the running total to each transmission.
//!
//! Memory state lives device-side only; the server never observes it.

use crate::channel::{self, ChannelParams, Rho};
use crate::error::{Error, Result};
use crate::learning::{self, HyperParams};
use crate::objective::{DataShard, Objective};
use crate::rng::{self, Purpose};
use crate::vector::ModelVector;
use rand::Rng;
use rand_distr::StandardNormal;

/// Aggregation scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// FedAvg over a perfect channel; the channel model is untouched.
    Ideal,
    /// Truncated channel inversion, masked entries dropped.
    Ota,
    /// Masked entries of the previous round compensated once.
    OtaShortMem,
    /// Long-term memory error feedback.
    AirflMem,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ideal => "ideal",
            Scheme::Ota => "ota",
            Scheme::OtaShortMem => "ota-smem",
            Scheme::AirflMem => "airfl-mem",
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        match s {
            "ideal" => Ok(Scheme::Ideal),
            "ota" => Ok(Scheme::Ota),
            "ota-smem" => Ok(Scheme::OtaShortMem),
            "airfl-mem" => Ok(Scheme::AirflMem),
            other => Err(Error::Config(format!(
                "unknown scheme '{other}' (expected ideal|ota|ota-smem|airfl-mem)"
            ))),
        }
    }

    pub fn all() -> [Scheme; 4] {
        [Scheme::Ideal, Scheme::Ota, Scheme::OtaShortMem, Scheme::AirflMem]
    }
}

/// One participating device: its shard, channel constants, and both memory
/// vectors (at most one is ever nonzero, depending on the scheme).
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub id: usize,
    pub shard: DataShard,
    pub channel: channel::DeviceChannel,
    /// Long-term accumulator m_k; zero at round 0.
    pub mem_long: ModelVector,
    /// Previous round's masked-out model difference; zero at round 0.
    pub mem_short: ModelVector,
}

impl DeviceState {
    pub fn new(id: usize, shard: DataShard, chan: channel::DeviceChannel, dim: usize) -> Self {
        DeviceState {
            id,
            shard,
            channel: chan,
            mem_long: ModelVector::zeros(dim),
            mem_short: ModelVector::zeros(dim),
        }
    }

    pub fn reset_memories(&mut self) {
        let dim = self.mem_long.len();
        self.mem_long = ModelVector::zeros(dim);
        self.mem_short = ModelVector::zeros(dim);
    }
}

/// x = delta / eta; stateless.
pub fn build_tx_none(delta: &ModelVector, eta: f64) -> ModelVector {
    ModelVector::from_vec(delta.values.iter().map(|v| v / eta).collect())
}

/// x = (delta + short-term memory) / eta.
pub fn build_tx_short(delta: &ModelVector, dev: &DeviceState, eta: f64) -> ModelVector {
    ModelVector::from_vec(
        delta
            .values
            .iter()
            .zip(&dev.mem_short.values)
            .map(|(d, m)| (d + m) / eta)
            .collect(),
    )
}

/// After the round: keep only the current round's masked-out model
/// difference. The compensation that was itself lost is dropped — that is
/// what makes the memory short-term.
pub fn update_short(dev: &mut DeviceState, delta: &ModelVector, mask: &[bool]) {
    for j in 0..delta.len() {
        dev.mem_short.values[j] = if mask[j] { 0.0 } else { delta.values[j] };
    }
}

/// x = (delta + long-term memory) / eta.
pub fn build_tx_mem(delta: &ModelVector, dev: &DeviceState, eta: f64) -> ModelVector {
    ModelVector::from_vec(
        delta
            .values
            .iter()
            .zip(&dev.mem_long.values)
            .map(|(d, m)| (d + m) / eta)
            .collect(),
    )
}

/// m <- m + delta - q (.) (m + delta): transmitted coordinates reset to
/// zero, masked-out coordinates accumulate the whole compensated value.
pub fn update_mem(dev: &mut DeviceState, delta: &ModelVector, mask: &[bool]) {
    for j in 0..delta.len() {
        let s = dev.mem_long.values[j] + delta.values[j];
        dev.mem_long.values[j] = if mask[j] { 0.0 } else { s };
    }
}

/// Per-round diagnostics.
#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub round: usize,
    pub loss: f64,
    pub gradnorm_sq: f64,
    /// Realized power-scaling factor; 0.0 for the ideal scheme and for
    /// silent rounds (kept finite for the trace format).
    pub rho: f64,
    /// Fraction of transmitted (device, coordinate) slots this round.
    pub mask_fill: f64,
    /// max_k || m_k ||^2 after the round's memory update.
    pub max_mem_sq: f64,
    /// Largest stochastic-gradient norm observed this round.
    pub max_grad_norm: f64,
    /// True when every masked signal was zero and the server skipped the
    /// update.
    pub silent: bool,
    /// Per-realization power-constraint check: rho <= ratio_k for all k,
    /// verified with the exact expressions used to choose rho.
    pub power_feasible: bool,
}

/// What the channel did in one round; split out so tests can force masks.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    pub gains: Vec<Vec<f64>>,
    pub masks: Vec<Vec<bool>>,
}

impl ChannelDraw {
    /// Sample fading per device from its named substream and threshold it.
    pub fn sample(devices: &[DeviceState], dim: usize, seed: u64, round: u32) -> Self {
        let gains: Vec<Vec<f64>> = devices
            .iter()
            .map(|dev| {
                let mut rng = rng::substream(seed, dev.id as u32, round, Purpose::Fading);
                channel::fading_row(dim, &mut rng)
            })
            .collect();
        let masks = devices
            .iter()
            .zip(&gains)
            .map(|(dev, row)| channel::apply_mask(row, dev.channel.eps))
            .collect();
        ChannelDraw { gains, masks }
    }

    pub fn fill_fraction(&self) -> f64 {
        let total: usize = self.masks.iter().map(|m| m.len()).sum();
        if total == 0 {
            return 0.0;
        }
        let on: usize = self
            .masks
            .iter()
            .map(|m| m.iter().filter(|&&b| b).count())
            .sum();
        on as f64 / total as f64
    }
}

/// Outcome of the transmit/aggregate stage.
#[derive(Debug, Clone)]
pub struct OtaStep {
    pub theta_next: ModelVector,
    pub rho: Rho,
    pub power_feasible: bool,
}

/// Build transmit signals for `scheme`, pick the power scaling, apply the
/// over-the-air update, and advance device memories.
///
/// Under perfect inversion every surviving entry arrives at amplitude
/// sqrt(rho), so the server estimate reduces coordinate-wise to the mean of
/// the masked payloads plus noise scaled by eta / (sqrt(rho) K). The update
/// is computed in that reduced form (payloads in model-difference units),
/// which keeps the transparent-channel case (eps = 0, sigma2 = 0) bitwise
/// equal to FedAvg. `rho` itself is still chosen from the physical transmit
/// signals x = payload / eta against each device's budget.
pub fn ota_transmit_round(
    scheme: Scheme,
    devices: &mut [DeviceState],
    deltas: &[ModelVector],
    theta: &ModelVector,
    eta: f64,
    draw: &ChannelDraw,
    params: &ChannelParams,
    noise_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<OtaStep> {
    let dim = theta.len();
    let k = devices.len();

    // transmit signals in channel units (for the power constraint) and
    // masked payloads in model-difference units (for the server estimate)
    let mut signals = Vec::with_capacity(k);
    let mut payloads = Vec::with_capacity(k);
    for (dev, delta) in devices.iter().zip(deltas) {
        let tx = match scheme {
            Scheme::Ota => build_tx_none(delta, eta),
            Scheme::OtaShortMem => build_tx_short(delta, dev, eta),
            Scheme::AirflMem => build_tx_mem(delta, dev, eta),
            Scheme::Ideal => unreachable!("ideal scheme does not touch the channel"),
        };
        tx.ensure_finite("transmit signal")?;
        let mask = &draw.masks[dev.id];
        let payload: Vec<f64> = match scheme {
            Scheme::Ota => (0..dim)
                .map(|j| if mask[j] { delta.values[j] } else { 0.0 })
                .collect(),
            Scheme::OtaShortMem => (0..dim)
                .map(|j| {
                    if mask[j] {
                        delta.values[j] + dev.mem_short.values[j]
                    } else {
                        0.0
                    }
                })
                .collect(),
            Scheme::AirflMem => (0..dim)
                .map(|j| {
                    if mask[j] {
                        delta.values[j] + dev.mem_long.values[j]
                    } else {
                        0.0
                    }
                })
                .collect(),
            Scheme::Ideal => unreachable!(),
        };
        signals.push(tx);
        payloads.push(ModelVector::from_vec(payload));
    }

    let rho = channel::compute_rho(&signals, &draw.gains, &draw.masks, params)?;

    // feasibility: rho <= d P kappa / sum q x^2 / g for every device, using
    // the identical ratio expression, so the comparison is exact
    let power_feasible = match rho {
        Rho::Silent => true,
        Rho::Active(r) => devices.iter().enumerate().all(|(idx, dev)| {
            match channel::device_rho_ratio(
                signals[idx].as_slice(),
                &draw.gains[idx],
                &draw.masks[idx],
                &dev.channel,
            ) {
                Some(ratio) => r <= ratio,
                None => true,
            }
        }),
    };

    let theta_next = match rho {
        Rho::Silent => theta.clone(),
        Rho::Active(r) => {
            let mean = learning::average_payloads(&payloads)?;
            let mut next: Vec<f64> = theta
                .values
                .iter()
                .zip(&mean.values)
                .map(|(t, m)| t - m)
                .collect();
            if params.sigma2 > 0.0 {
                let coeff = eta / (r.sqrt() * k as f64);
                let sd = params.sigma2.sqrt();
                for v in next.iter_mut() {
                    *v -= coeff * sd * noise_rng.sample::<f64, _>(StandardNormal);
                }
            }
            ModelVector::from_vec(next)
        }
    };

    // device-side memory updates happen regardless of a silent server
    for (dev, delta) in devices.iter_mut().zip(deltas) {
        let mask = draw.masks[dev.id].clone();
        match scheme {
            Scheme::Ota => {}
            Scheme::OtaShortMem => update_short(dev, delta, &mask),
            Scheme::AirflMem => update_mem(dev, delta, &mask),
            Scheme::Ideal => unreachable!(),
        }
    }

    Ok(OtaStep {
        theta_next,
        rho,
        power_feasible,
    })
}

/// One full round of `scheme`: local SGD on every device, transmission,
/// aggregation, memory updates, and diagnostics.
pub fn scheme_round(
    scheme: Scheme,
    objective: &Objective,
    devices: &mut [DeviceState],
    theta: &ModelVector,
    hp: &HyperParams,
    params: &ChannelParams,
    round: usize,
) -> Result<(ModelVector, RoundTrace)> {
    let eta = hp.eta_at(round);
    let dim = theta.len();

    let mut deltas = Vec::with_capacity(devices.len());
    let mut max_grad_norm: f64 = 0.0;
    for dev in devices.iter() {
        let mut rng = rng::substream(hp.seed, dev.id as u32, round as u32, Purpose::Batch);
        let up = learning::local_sgd_round(
            objective,
            &dev.shard,
            theta,
            eta,
            hp.local_steps,
            hp.batch_size,
            &mut rng,
        )?;
        max_grad_norm = max_grad_norm.max(up.max_grad_norm);
        deltas.push(up.delta);
    }

    let (theta_next, rho, mask_fill, silent, power_feasible) = match scheme {
        Scheme::Ideal => {
            let next = learning::fedavg_update(theta, &deltas)?;
            (next, 0.0, 1.0, false, true)
        }
        _ => {
            let draw = ChannelDraw::sample(devices, dim, hp.seed, round as u32);
            let mut noise_rng =
                rng::substream(hp.seed, rng::SERVER, round as u32, Purpose::Noise);
            let step = ota_transmit_round(
                scheme, devices, &deltas, theta, eta, &draw, params, &mut noise_rng,
            )?;
            let fill = draw.fill_fraction();
            let (rho_val, silent) = match step.rho {
                Rho::Silent => (0.0, true),
                Rho::Active(r) => (r, false),
            };
            (step.theta_next, rho_val, fill, silent, step.power_feasible)
        }
    };

    theta_next.ensure_finite("scheme_round output")?;
    let (loss, gradnorm_sq) = {
        let shards: Vec<DataShard> = devices.iter().map(|d| d.shard.clone()).collect();
        learning::eval_loss_and_gradnorm(objective, &theta_next, &shards)
    };
    let max_mem_sq = devices
        .iter()
        .map(|d| match scheme {
            Scheme::OtaShortMem => d.mem_short.norm_sq(),
            _ => d.mem_long.norm_sq(),
        })
        .fold(0.0, f64::max);

    Ok((
        theta_next,
        RoundTrace {
            round,
            loss,
            gradnorm_sq,
            rho,
            mask_fill,
            max_mem_sq,
            max_grad_norm,
            silent,
            power_feasible,
        },
    ))
}
