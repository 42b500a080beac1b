//! Rayleigh-fading multiple-access channel with truncated channel
//! inversion.
//!
//! Perfect CSIT inversion cancels phase exactly, so the simulator only ever
//! draws squared magnitudes `|h|^2 ~ Exp(1)` and never materializes complex
//! coefficients: every surviving entry arrives at the server at amplitude
//! `sqrt(rho)` by construction. Channel noise is real Gaussian with
//! variance `sigma2`.

use crate::error::{Error, Result};
use crate::vector::ModelVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

/// Per-device channel-side constants.
#[derive(Debug, Clone, Copy)]
pub struct DeviceChannel {
    /// Power budget per channel use (watts).
    pub power: f64,
    /// Large-scale gain.
    pub kappa: f64,
    /// Truncation threshold on |h|^2. Zero means always transmit.
    pub eps: f64,
}

impl DeviceChannel {
    /// Transmission probability Pr(|h|^2 >= eps) = exp(-eps) under the
    /// unit-mean exponential gain law.
    pub fn lambda(&self) -> f64 {
        (-self.eps).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0) {
            return Err(Error::Config(format!(
                "power budget must be positive, got {}",
                self.power
            )));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!(
                "large-scale gain must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::Config(format!(
                "truncation threshold must be >= 0, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Channel constants for the whole cell.
#[derive(Debug, Clone)]
pub struct ChannelParams {
    /// Noise variance (watts).
    pub sigma2: f64,
    pub devices: Vec<DeviceChannel>,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 >= 0.0) {
            return Err(Error::Config(format!(
                "noise variance must be >= 0, got {}",
                self.sigma2
            )));
        }
        for d in &self.devices {
            d.validate()?;
        }
        Ok(())
    }
}

/// dBm -> watts. -83 dBm ~ 5.01e-12 W.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// One device's squared channel magnitudes for a round: d i.i.d. draws of
/// |h|^2 ~ Exp(1).
pub fn fading_row(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(Exp1)).collect()
}

/// K x d matrix of squared magnitudes, sampled row by row.
pub fn sample_fading(devices: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..devices).map(|_| fading_row(dim, rng)).collect()
}

/// Truncation mask: transmit iff the gain meets the threshold (ties
/// transmit).
pub fn apply_mask(gains: &[f64], eps: f64) -> Vec<bool> {
    gains.iter().map(|&g| g >= eps).collect()
}

/// Power-scaling outcome for a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rho {
    /// No device has a nonzero masked signal; the server skips the update.
    Silent,
    /// Common scaling factor rho > 0.
    Active(f64),
}

impl Rho {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Rho::Silent => None,
            Rho::Active(v) => Some(v),
        }
    }
}

/// `d * P_k * kappa_k / sum_j q_j x_j^2 / g_j` for one device, or `None`
/// when the masked signal is all zero. This is the largest rho the device
/// tolerates; `compute_rho` takes the minimum, so the same expression shape
/// is reused by the feasibility checks and equality is exact.
pub fn device_rho_ratio(
    signal: &[f64],
    gains: &[f64],
    mask: &[bool],
    dev: &DeviceChannel,
) -> Option<f64> {
    let dim = signal.len();
    debug_assert_eq!(gains.len(), dim);
    debug_assert_eq!(mask.len(), dim);
    let mut denom = 0.0;
    for j in 0..dim {
        if mask[j] && signal[j] != 0.0 {
            denom += signal[j] * signal[j] / gains[j];
        }
    }
    if denom == 0.0 {
        None
    } else {
        Some(dim as f64 * dev.power * dev.kappa / denom)
    }
}

/// Common scaling factor: the minimum of the per-device ratios over devices
/// with a nonzero masked signal. With this rho the per-realization energy
/// `(1/d) || p (.) q (.) x ||^2` meets the budget for every device, with
/// equality for the minimizing one.
pub fn compute_rho(
    signals: &[ModelVector],
    gains: &[Vec<f64>],
    masks: &[Vec<bool>],
    params: &ChannelParams,
) -> Result<Rho> {
    params.validate()?;
    if signals.len() != params.devices.len() {
        return Err(Error::Dimension {
            expected: params.devices.len(),
            got: signals.len(),
        });
    }
    let mut rho = f64::INFINITY;
    let mut any = false;
    for (k, signal) in signals.iter().enumerate() {
        signal.ensure_finite("compute_rho signal")?;
        if let Some(ratio) =
            device_rho_ratio(signal.as_slice(), &gains[k], &masks[k], &params.devices[k])
        {
            any = true;
            if ratio < rho {
                rho = ratio;
            }
        }
    }
    if !any {
        return Ok(Rho::Silent);
    }
    Ok(Rho::Active(rho))
}

/// Received superposition: `y_j = sqrt(rho) * sum_k q_kj x_kj + n_j` with
/// `n_j ~ N(0, sigma2)`. Aligned amplitudes are exact under perfect
/// inversion, so per-device gains do not appear.
pub fn ota_round(
    signals: &[ModelVector],
    masks: &[Vec<bool>],
    rho: f64,
    sigma2: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let dim = signals.first().map_or(0, |s| s.len());
    let sqrt_rho = rho.sqrt();
    let mut y = vec![0.0; dim];
    for (signal, mask) in signals.iter().zip(masks) {
        for j in 0..dim {
            if mask[j] {
                y[j] += signal.values[j];
            }
        }
    }
    if sigma2 > 0.0 {
        let sd = sigma2.sqrt();
        for v in y.iter_mut() {
            *v = sqrt_rho * *v + sd * rng.sample::<f64, _>(StandardNormal);
        }
    } else {
        for v in y.iter_mut() {
            *v *= sqrt_rho;
        }
    }
    y
}

/// Server-side estimate and global step:
/// `theta' = theta - eta / (sqrt(rho) K) * y`.
pub fn ota_global_update(
    theta: &ModelVector,
    received: &[f64],
    eta: f64,
    rho: f64,
    devices: usize,
) -> ModelVector {
    let coeff = eta / (rho.sqrt() * devices as f64);
    ModelVector::from_vec(
        theta
            .values
            .iter()
            .zip(received)
            .map(|(t, y)| t - coeff * y)
            .collect(),
    )
}
