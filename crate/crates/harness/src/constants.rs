//! Probe-based estimation of the gradient-norm bound B and the smoothness
//! constant L from data, feeding the threshold design.

use airfl_core::learning::stochastic_gradient;
use airfl_core::objective::{local_gradient, DataShard, Objective, Sample};
use airfl_core::rng::{self, Purpose};
use airfl_core::vector::{norm, norm_sq, ModelVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

/// Estimates plus the probe spec that produced them.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsEstimate {
    pub b_hat: f64,
    pub l_hat: f64,
    pub probe_count: usize,
    pub batch_size: usize,
    pub refine_iters: usize,
}

fn probe_theta(dim: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    // expected unit norm, matching the scale the synthetic optima live at
    let s = 1.0 / (dim as f64).sqrt();
    (0..dim).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// B_hat: the largest mini-batch gradient norm over random probe points in
/// the iterate envelope. L_hat: the largest secant ratio
/// `|| grad f_k(u) - grad f_k(w) || / || u - w ||` over random pairs,
/// sharpened by a few secant-direction power iterations on the best pair.
pub fn estimate_constants(
    objective: &Objective,
    shards: &[DataShard],
    probe_count: usize,
    batch_size: usize,
    seed: u64,
) -> ConstantsEstimate {
    assert!(probe_count >= 1 && !shards.is_empty());
    let dim = objective.dim();
    let mut rng = rng::substream(seed, rng::SERVER, 0, Purpose::Probe);
    let refine_iters = 12;

    // --- gradient-norm bound ---
    let mut b_hat: f64 = 0.0;
    for i in 0..probe_count {
        let shard = &shards[i % shards.len()];
        let theta = ModelVector::from_vec(probe_theta(dim, &mut rng));
        let m = batch_size.min(shard.samples.len());
        let picks = index::sample(&mut rng, shard.samples.len(), m);
        let batch: Vec<&Sample> = picks.iter().map(|j| &shard.samples[j]).collect();
        if let Ok(g) = stochastic_gradient(objective, &theta, &batch) {
            b_hat = b_hat.max(g.norm_sq().sqrt());
        }
    }

    // --- smoothness constant: random secant pairs ---
    let mut l_hat: f64 = 0.0;
    let mut best: Option<(usize, Vec<f64>, Vec<f64>)> = None; // (device, base, direction)
    for i in 0..probe_count {
        let k = i % shards.len();
        let u = probe_theta(dim, &mut rng);
        let w = probe_theta(dim, &mut rng);
        let gu = local_gradient(objective, &u, &shards[k]);
        let gw = local_gradient(objective, &w, &shards[k]);
        let diff: Vec<f64> = gu.iter().zip(&gw).map(|(a, b)| a - b).collect();
        let dist_sq = u
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        if dist_sq > 0.0 {
            let ratio = (norm_sq(&diff) / dist_sq).sqrt();
            if ratio > l_hat {
                l_hat = ratio;
                let dir: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a - b).collect();
                best = Some((k, w, dir));
            }
        }
    }

    // --- refinement: secant-direction power iterations on the best pair ---
    if let Some((k, base, mut dir)) = best {
        let g_base = local_gradient(objective, &base, &shards[k]);
        let delta = 1e-4;
        for _ in 0..refine_iters {
            let n = norm(&dir);
            if n == 0.0 {
                break;
            }
            let probe: Vec<f64> = base
                .iter()
                .zip(&dir)
                .map(|(b, d)| b + delta * d / n)
                .collect();
            let g_probe = local_gradient(objective, &probe, &shards[k]);
            let diff: Vec<f64> = g_probe.iter().zip(&g_base).map(|(a, b)| a - b).collect();
            let ratio = norm(&diff) / delta;
            l_hat = l_hat.max(ratio);
            dir = diff;
        }
    }

    ConstantsEstimate {
        b_hat,
        l_hat,
        probe_count,
        batch_size,
        refine_iters,
    }
}
