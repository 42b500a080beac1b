//! Experiment configuration: a single JSON document with defaults matching
//! the reference setup (20 devices, batch 64, one local step, 2e-6 W power
//! budget, -83 dBm noise, 2.4 GHz carrier, 100 m cell), all overridable.

use airfl_core::channel::{dbm_to_watts, ChannelParams, DeviceChannel};
use airfl_core::feedback::Scheme;
use airfl_core::objective::SyntheticKind;
use airfl_core::rng::{self, Purpose};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse config {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// Free-space path loss `(c / (4 pi f_c r))^2`.
pub fn compute_pathloss(distance_m: f64, carrier_hz: f64) -> Result<f64, ConfigError> {
    if !(distance_m > 0.0) {
        return Err(invalid("distance", format!("must be positive, got {distance_m}")));
    }
    if !(carrier_hz > 0.0) {
        return Err(invalid("carrier_hz", format!("must be positive, got {carrier_hz}")));
    }
    let x = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * carrier_hz * distance_m);
    Ok(x * x)
}

/// How per-device large-scale gains are produced.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum PathlossConfig {
    /// Devices placed uniformly in a disk cell; free-space loss at the
    /// carrier frequency.
    Cell { cell_radius_m: f64, carrier_hz: f64 },
    /// One shared gain for every device (desk-scale runs).
    Fixed { kappa: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Noise variance in dBm; ignored when `sigma2_watts` is set.
    pub sigma2_dbm: f64,
    pub sigma2_watts: Option<f64>,
    /// Per-channel-use power budget, shared by all devices.
    pub power_watts: f64,
    pub pathloss: PathlossConfig,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            sigma2_dbm: -83.0,
            sigma2_watts: None,
            power_watts: 2e-6,
            pathloss: PathlossConfig::Cell {
                cell_radius_m: 100.0,
                carrier_hz: 2.4e9,
            },
        }
    }
}

impl ChannelConfig {
    pub fn sigma2(&self) -> f64 {
        self.sigma2_watts.unwrap_or_else(|| dbm_to_watts(self.sigma2_dbm))
    }
}

/// Threshold selection mode.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdsConfig {
    /// One shared truncation threshold.
    Fixed { eps: f64 },
    /// Solve the convex design problem per seed, using constants estimated
    /// from the data.
    Optimized,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MnistConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schemes: Vec<String>,
    /// "least-squares", "logistic", or "mnist-mlp".
    pub objective: String,
    pub devices: usize,
    /// Model dimension; ignored for mnist-mlp (the network fixes it).
    pub dim: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub heterogeneity: f64,
    pub samples_per_device: usize,
    pub seeds: Vec<u64>,
    pub channel: ChannelConfig,
    pub thresholds: ThresholdsConfig,
    pub mnist: Option<MnistConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schemes: vec![
                "ideal".into(),
                "ota".into(),
                "ota-smem".into(),
                "airfl-mem".into(),
            ],
            objective: "logistic".into(),
            devices: 20,
            dim: 200,
            local_steps: 1,
            rounds: 100,
            batch_size: 64,
            eta: 0.05,
            heterogeneity: 1.0,
            samples_per_device: 128,
            seeds: vec![0],
            channel: ChannelConfig::default(),
            thresholds: ThresholdsConfig::Optimized,
            mnist: None,
        }
    }
}

impl ExperimentConfig {
    /// Small synthetic experiment that shows the scheme separation in well
    /// under two minutes: logistic regression, 10 devices, 200 rounds,
    /// five seeds, unit path loss.
    pub fn desk_scale() -> Self {
        ExperimentConfig {
            schemes: vec![
                "ideal".into(),
                "ota".into(),
                "ota-smem".into(),
                "airfl-mem".into(),
            ],
            objective: "logistic".into(),
            devices: 10,
            dim: 200,
            local_steps: 1,
            rounds: 200,
            batch_size: 64,
            eta: 0.2,
            heterogeneity: 1.0,
            samples_per_device: 128,
            seeds: vec![0, 1, 2, 3, 4],
            channel: ChannelConfig {
                sigma2_dbm: 0.0,
                sigma2_watts: Some(2e-4),
                power_watts: 1.0,
                pathloss: PathlossConfig::Fixed { kappa: 1.0 },
            },
            thresholds: ThresholdsConfig::Optimized,
            mnist: None,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schemes(&self) -> Result<Vec<Scheme>, ConfigError> {
        self.schemes
            .iter()
            .map(|s| Scheme::parse(s).map_err(|e| invalid("schemes", e.to_string())))
            .collect()
    }

    pub fn synthetic_kind(&self) -> Result<Option<SyntheticKind>, ConfigError> {
        match self.objective.as_str() {
            "least-squares" => Ok(Some(SyntheticKind::LeastSquares)),
            "logistic" => Ok(Some(SyntheticKind::Logistic)),
            "mnist-mlp" => Ok(None),
            other => Err(invalid(
                "objective",
                format!("unknown objective '{other}' (expected least-squares|logistic|mnist-mlp)"),
            )),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.schemes()?;
        if self.schemes.is_empty() {
            return Err(invalid("schemes", "at least one scheme required"));
        }
        let synthetic = self.synthetic_kind()?;
        if synthetic.is_none() && self.mnist.is_none() {
            return Err(invalid(
                "mnist",
                "objective mnist-mlp requires image/label paths",
            ));
        }
        for (field, v) in [
            ("devices", self.devices),
            ("dim", self.dim),
            ("local_steps", self.local_steps),
            ("rounds", self.rounds),
            ("batch_size", self.batch_size),
            ("samples_per_device", self.samples_per_device),
        ] {
            if v < 1 {
                return Err(invalid(field, format!("must be >= 1, got {v}")));
            }
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed required"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", format!("must be positive, got {}", self.eta)));
        }
        if !(self.heterogeneity >= 0.0) {
            return Err(invalid(
                "heterogeneity",
                format!("must be >= 0, got {}", self.heterogeneity),
            ));
        }
        if !(self.channel.power_watts > 0.0) {
            return Err(invalid(
                "channel.power_watts",
                format!("must be positive, got {}", self.channel.power_watts),
            ));
        }
        if !(self.channel.sigma2() >= 0.0) {
            return Err(invalid("channel.sigma2", "noise variance must be >= 0"));
        }
        match self.channel.pathloss {
            PathlossConfig::Cell {
                cell_radius_m,
                carrier_hz,
            } => {
                if !(cell_radius_m > 0.0 && carrier_hz > 0.0) {
                    return Err(invalid(
                        "channel.pathloss",
                        "cell radius and carrier must be positive",
                    ));
                }
            }
            PathlossConfig::Fixed { kappa } => {
                if !(kappa > 0.0) {
                    return Err(invalid(
                        "channel.pathloss.kappa",
                        format!("must be positive, got {kappa}"),
                    ));
                }
            }
        }
        if let ThresholdsConfig::Fixed { eps } = self.thresholds {
            if !(eps >= 0.0) {
                return Err(invalid(
                    "thresholds.eps",
                    format!("must be >= 0, got {eps}"),
                ));
            }
        }
        Ok(())
    }

    /// Draw per-device large-scale gains. Cell placement uses the
    /// per-device placement substream, so it is coupled across schemes and
    /// reproducible per seed.
    pub fn device_kappas(&self, seed: u64) -> Result<Vec<f64>, ConfigError> {
        match self.channel.pathloss {
            PathlossConfig::Fixed { kappa } => Ok(vec![kappa; self.devices]),
            PathlossConfig::Cell {
                cell_radius_m,
                carrier_hz,
            } => (0..self.devices)
                .map(|k| {
                    let mut rng = rng::substream(seed, k as u32, 0, Purpose::Placement);
                    // u in [0,1) -> r in (0, radius]
                    let r = cell_radius_m * (1.0 - rng.gen::<f64>());
                    compute_pathloss(r, carrier_hz)
                })
                .collect(),
        }
    }

    /// Assemble the channel constants for one seed, given the thresholds.
    pub fn channel_params(
        &self,
        kappas: &[f64],
        eps: &[f64],
    ) -> Result<ChannelParams, ConfigError> {
        if kappas.len() != self.devices || eps.len() != self.devices {
            return Err(invalid("devices", "kappa/eps length mismatch"));
        }
        Ok(ChannelParams {
            sigma2: self.channel.sigma2(),
            devices: kappas
                .iter()
                .zip(eps)
                .map(|(&kappa, &e)| DeviceChannel {
                    power: self.channel.power_watts,
                    kappa,
                    eps: e,
                })
                .collect(),
        })
    }

    /// Transmit SNR in dB at the mean path loss of the cell:
    /// `10 log10(P mean(kappa) / sigma2)`.
    pub fn snr_db(&self, kappas: &[f64]) -> f64 {
        let mean_kappa = kappas.iter().sum::<f64>() / kappas.len() as f64;
        10.0 * (self.channel.power_watts * mean_kappa / self.channel.sigma2()).log10()
    }
}

pub const SNR_DEFINITION: &str =
    "transmit SNR = P * mean_cell_pathloss / sigma2, in dB at the mean large-scale gain";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pathloss_hand_value() {
        // 100 m at 2.4 GHz
        let k = compute_pathloss(100.0, 2.4e9).unwrap();
        assert!((k - 9.8809612103184926e-9).abs() / k < 1e-12, "{k}");
    }

    #[test]
    fn pathloss_inverse_square() {
        let k1 = compute_pathloss(50.0, 2.4e9).unwrap();
        let k2 = compute_pathloss(100.0, 2.4e9).unwrap();
        assert!((k1 / k2 - 4.0).abs() < 1e-12);
        assert!(compute_pathloss(0.0, 2.4e9).is_err());
    }

    #[test]
    fn defaults_match_reference_setup() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.local_steps, 1);
        assert_eq!(cfg.devices, 20);
        assert_eq!(cfg.channel.power_watts, 2e-6);
        assert_eq!(cfg.channel.sigma2_dbm, -83.0);
        assert!((cfg.channel.sigma2() - 5.011872336272715e-12).abs() < 1e-24);
        assert_eq!(
            cfg.channel.pathloss,
            PathlossConfig::Cell {
                cell_radius_m: 100.0,
                carrier_hz: 2.4e9
            }
        );
        cfg.validate().unwrap();
    }

    #[test]
    fn placement_is_deterministic_and_in_range() {
        let cfg = ExperimentConfig::default();
        let a = cfg.device_kappas(7).unwrap();
        let b = cfg.device_kappas(7).unwrap();
        assert_eq!(a, b);
        let max_kappa = compute_pathloss(1e-6, 2.4e9).unwrap();
        let min_kappa = compute_pathloss(100.0, 2.4e9).unwrap();
        for k in &a {
            assert!(*k >= min_kappa && *k <= max_kappa);
        }
        assert_ne!(a, cfg.device_kappas(8).unwrap());
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = ExperimentConfig::default();
        cfg.eta = -1.0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("eta"), "{err}");

        let mut cfg = ExperimentConfig::default();
        cfg.objective = "mnist-mlp".into();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("mnist"), "{err}");
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig::desk_scale();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
