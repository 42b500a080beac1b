//! Property tests for the aggregation and channel invariants: conservation
//! of the long-term feedback rule, mask-reset, power feasibility of the
//! chosen scaling factor, and aggregation linearity.

use airfl_core::channel::{self, ChannelParams, DeviceChannel, Rho};
use airfl_core::feedback::{self, DeviceState};
use airfl_core::learning;
use airfl_core::objective::{DataShard, Sample};
use airfl_core::vector::ModelVector;
use proptest::prelude::*;

fn small_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, dim)
}

fn mask(dim: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), dim)
}

fn blank_device(dim: usize) -> DeviceState {
    DeviceState::new(
        0,
        DataShard {
            owner: 0,
            samples: vec![Sample {
                features: vec![0.0; dim],
                label: 0.0,
            }],
        },
        DeviceChannel {
            power: 1.0,
            kappa: 1.0,
            eps: 0.5,
        },
        dim,
    )
}

proptest! {
    #[test]
    fn long_memory_conserves_information(
        delta in small_vec(12),
        mem in small_vec(12),
        q in mask(12),
    ) {
        let mut dev = blank_device(12);
        dev.mem_long = ModelVector::from_vec(mem.clone());
        let delta = ModelVector::from_vec(delta);
        let compensated: Vec<f64> = mem
            .iter()
            .zip(&delta.values)
            .map(|(m, d)| m + d)
            .collect();
        feedback::update_mem(&mut dev, &delta, &q);
        for j in 0..12 {
            // payload + new memory = old memory + delta, bitwise
            let payload = if q[j] { compensated[j] } else { 0.0 };
            let recon = payload + dev.mem_long.values[j];
            prop_assert_eq!(recon.to_bits(), compensated[j].to_bits());
            // transmitted coordinates reset exactly
            if q[j] {
                prop_assert_eq!(dev.mem_long.values[j], 0.0);
            }
        }
    }

    #[test]
    fn short_memory_depends_only_on_current_round(
        delta in small_vec(8),
        stale in small_vec(8),
        q in mask(8),
    ) {
        let mut with_history = blank_device(8);
        with_history.mem_short = ModelVector::from_vec(stale);
        let mut fresh = blank_device(8);
        let delta = ModelVector::from_vec(delta);
        feedback::update_short(&mut with_history, &delta, &q);
        feedback::update_short(&mut fresh, &delta, &q);
        prop_assert_eq!(&with_history.mem_short.values, &fresh.mem_short.values);
        // all-ones mask leaves nothing behind
        feedback::update_short(&mut with_history, &delta, &[true; 8]);
        prop_assert!(with_history.mem_short.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fedavg_is_negated_mean_bitwise(
        a in small_vec(6),
        b in small_vec(6),
        c in small_vec(6),
        theta in small_vec(6),
    ) {
        let deltas = vec![
            ModelVector::from_vec(a),
            ModelVector::from_vec(b),
            ModelVector::from_vec(c),
        ];
        let theta = ModelVector::from_vec(theta);
        let mean = learning::average_payloads(&deltas).unwrap();
        let next = learning::fedavg_update(&theta, &deltas).unwrap();
        for j in 0..6 {
            prop_assert_eq!(
                next.values[j].to_bits(),
                (theta.values[j] - mean.values[j]).to_bits()
            );
        }
    }

    #[test]
    fn mask_threshold_semantics(gains in prop::collection::vec(0.0f64..5.0, 16), eps in 0.0f64..3.0) {
        let m = channel::apply_mask(&gains, eps);
        for (g, keep) in gains.iter().zip(&m) {
            prop_assert_eq!(*keep, *g >= eps);
        }
    }

    #[test]
    fn chosen_rho_is_feasible_for_every_device(
        x1 in small_vec(10),
        x2 in small_vec(10),
        g1 in prop::collection::vec(0.01f64..5.0, 10),
        g2 in prop::collection::vec(0.01f64..5.0, 10),
        p1 in 0.1f64..10.0,
        p2 in 0.1f64..10.0,
        eps in 0.05f64..1.5,
    ) {
        let devs = vec![
            DeviceChannel { power: p1, kappa: 1.0, eps },
            DeviceChannel { power: p2, kappa: 0.5, eps },
        ];
        let params = ChannelParams { sigma2: 0.0, devices: devs.clone() };
        let masks: Vec<Vec<bool>> = vec![
            channel::apply_mask(&g1, eps),
            channel::apply_mask(&g2, eps),
        ];
        let gains = vec![g1, g2];
        let signals = vec![ModelVector::from_vec(x1), ModelVector::from_vec(x2)];
        match channel::compute_rho(&signals, &gains, &masks, &params).unwrap() {
            Rho::Silent => {
                for k in 0..2 {
                    prop_assert!(channel::device_rho_ratio(
                        signals[k].as_slice(), &gains[k], &masks[k], &devs[k]
                    ).is_none());
                }
            }
            Rho::Active(rho) => {
                let mut tight = false;
                for k in 0..2 {
                    if let Some(ratio) = channel::device_rho_ratio(
                        signals[k].as_slice(), &gains[k], &masks[k], &devs[k]
                    ) {
                        // feasibility is exact: rho is the min of these ratios
                        prop_assert!(rho <= ratio);
                        if rho == ratio {
                            tight = true;
                        }
                        // the energy statement behind the ratio, within roundoff
                        let mut energy = 0.0;
                        for j in 0..10 {
                            if masks[k][j] {
                                let s = signals[k].values[j];
                                energy += rho * s * s / (devs[k].kappa * gains[k][j]);
                            }
                        }
                        energy /= 10.0;
                        prop_assert!(energy <= devs[k].power * (1.0 + 1e-9));
                    }
                }
                prop_assert!(tight, "no device met its budget with equality");
            }
        }
    }
}
