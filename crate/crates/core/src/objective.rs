//! Objectives, per-device data shards, and synthetic federation builders.
//!
//! Three objective kinds are built in:
//! * least squares — per-sample loss `0.5 * (theta^T x - y)^2`,
//! * binary logistic regression with labels in {-1, +1},
//! * a 784-100-10 ReLU MLP with softmax cross-entropy (79,510 parameters
//!   with biases), for MNIST-scale runs.
//!
//! Gradients are analytic; a finite-difference oracle in the tests checks
//! every kind.

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::vector::{dot, norm_sq};
use rand::Rng;
use rand_distr::StandardNormal;

/// One training sample. `label` carries the regression target for least
/// squares, a +/-1 class for logistic, and the class index for the MLP.
#[derive(Debug, Clone)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: f64,
}

/// A device's private dataset.
#[derive(Debug, Clone)]
pub struct DataShard {
    pub owner: usize,
    pub samples: Vec<Sample>,
}

impl DataShard {
    pub fn ensure_non_empty(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Config(format!(
                "device {} has an empty data shard",
                self.owner
            )));
        }
        Ok(())
    }
}

/// Loss family plus model dimensions; evaluators are methods.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Objective {
    LeastSquares { dim: usize },
    Logistic { dim: usize },
    MnistMlp { input: usize, hidden: usize, classes: usize },
}

impl Objective {
    pub fn least_squares(dim: usize) -> Self {
        Objective::LeastSquares { dim }
    }

    pub fn logistic(dim: usize) -> Self {
        Objective::Logistic { dim }
    }

    /// The 784-100-10 network: one hidden ReLU layer, softmax output.
    pub fn mnist_mlp() -> Self {
        Objective::MnistMlp {
            input: 784,
            hidden: 100,
            classes: 10,
        }
    }

    /// Number of trainable parameters.
    pub fn dim(&self) -> usize {
        match *self {
            Objective::LeastSquares { dim } | Objective::Logistic { dim } => dim,
            Objective::MnistMlp {
                input,
                hidden,
                classes,
            } => input * hidden + hidden + hidden * classes + classes,
        }
    }

    pub fn sample_loss(&self, theta: &[f64], sample: &Sample) -> f64 {
        match *self {
            Objective::LeastSquares { .. } => {
                let r = dot(theta, &sample.features) - sample.label;
                0.5 * r * r
            }
            Objective::Logistic { .. } => {
                let z = dot(theta, &sample.features);
                softplus(-sample.label * z)
            }
            Objective::MnistMlp {
                input,
                hidden,
                classes,
            } => mlp_forward(theta, sample, input, hidden, classes).loss,
        }
    }

    /// acc += scale * grad of the per-sample loss at `theta`.
    pub fn accumulate_sample_grad(
        &self,
        theta: &[f64],
        sample: &Sample,
        scale: f64,
        acc: &mut [f64],
    ) {
        match *self {
            Objective::LeastSquares { .. } => {
                let r = dot(theta, &sample.features) - sample.label;
                for (g, x) in acc.iter_mut().zip(&sample.features) {
                    *g += scale * r * x;
                }
            }
            Objective::Logistic { .. } => {
                let z = dot(theta, &sample.features);
                // d/dz softplus(-y z) = -y * sigmoid(-y z)
                let coeff = -sample.label * sigmoid(-sample.label * z);
                for (g, x) in acc.iter_mut().zip(&sample.features) {
                    *g += scale * coeff * x;
                }
            }
            Objective::MnistMlp {
                input,
                hidden,
                classes,
            } => mlp_backward(theta, sample, input, hidden, classes, scale, acc),
        }
    }

    /// Convenience wrapper returning a fresh gradient vector.
    pub fn sample_grad(&self, theta: &[f64], sample: &Sample) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.accumulate_sample_grad(theta, sample, 1.0, &mut g);
        g
    }
}

/// Numerically stable log(1 + exp(t)).
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

// Parameter layout for the MLP inside a flat vector:
//   w1[i * hidden + j]  (input x hidden), then b1[hidden],
//   w2[j * classes + c] (hidden x classes), then b2[classes].
struct MlpForward {
    loss: f64,
    hidden_pre: Vec<f64>,
    probs: Vec<f64>,
}

fn mlp_split(theta: &[f64], input: usize, hidden: usize, classes: usize) -> (usize, usize, usize) {
    let w1_end = input * hidden;
    let b1_end = w1_end + hidden;
    let w2_end = b1_end + hidden * classes;
    debug_assert_eq!(theta.len(), w2_end + classes);
    (w1_end, b1_end, w2_end)
}

fn mlp_forward(
    theta: &[f64],
    sample: &Sample,
    input: usize,
    hidden: usize,
    classes: usize,
) -> MlpForward {
    let (w1_end, b1_end, w2_end) = mlp_split(theta, input, hidden, classes);
    let (w1, rest) = theta.split_at(w1_end);
    let (b1, rest2) = rest.split_at(b1_end - w1_end);
    let (w2, b2) = rest2.split_at(w2_end - b1_end);

    let mut hidden_pre = b1.to_vec();
    for (i, &x) in sample.features.iter().enumerate() {
        if x != 0.0 {
            let row = &w1[i * hidden..(i + 1) * hidden];
            for (h, &w) in hidden_pre.iter_mut().zip(row) {
                *h += x * w;
            }
        }
    }

    let mut logits = b2.to_vec();
    for (j, &h) in hidden_pre.iter().enumerate() {
        if h > 0.0 {
            let row = &w2[j * classes..(j + 1) * classes];
            for (l, &w) in logits.iter_mut().zip(row) {
                *l += h * w;
            }
        }
    }

    // softmax cross-entropy via log-sum-exp
    let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &l in &logits {
        z += (l - max_logit).exp();
    }
    let log_z = max_logit + z.ln();
    let class = sample.label as usize;
    let loss = log_z - logits[class];
    let probs = logits.iter().map(|&l| (l - log_z).exp()).collect();

    MlpForward {
        loss,
        hidden_pre,
        probs,
    }
}

fn mlp_backward(
    theta: &[f64],
    sample: &Sample,
    input: usize,
    hidden: usize,
    classes: usize,
    scale: f64,
    acc: &mut [f64],
) {
    let (w1_end, b1_end, w2_end) = mlp_split(theta, input, hidden, classes);
    let fwd = mlp_forward(theta, sample, input, hidden, classes);
    let class = sample.label as usize;

    // d loss / d logits = probs - onehot(class)
    let mut dlogits = fwd.probs;
    dlogits[class] -= 1.0;

    let w2 = &theta[b1_end..w2_end];
    let relu: Vec<f64> = fwd.hidden_pre.iter().map(|&h| h.max(0.0)).collect();

    // w2, b2 gradients
    {
        let (acc_w2, acc_b2) = acc[b1_end..].split_at_mut(w2_end - b1_end);
        for (j, &h) in relu.iter().enumerate() {
            if h != 0.0 {
                let row = &mut acc_w2[j * classes..(j + 1) * classes];
                for (g, &dl) in row.iter_mut().zip(&dlogits) {
                    *g += scale * h * dl;
                }
            }
        }
        for (g, &dl) in acc_b2.iter_mut().zip(&dlogits) {
            *g += scale * dl;
        }
    }

    // back through ReLU
    let mut dhidden = vec![0.0; hidden];
    for (j, dh) in dhidden.iter_mut().enumerate() {
        if fwd.hidden_pre[j] > 0.0 {
            *dh = dot(&w2[j * classes..(j + 1) * classes], &dlogits);
        }
    }

    // w1, b1 gradients
    {
        let (acc_w1, acc_b1) = acc[..b1_end].split_at_mut(w1_end);
        for (i, &x) in sample.features.iter().enumerate() {
            if x != 0.0 {
                let row = &mut acc_w1[i * hidden..(i + 1) * hidden];
                for (g, &dh) in row.iter_mut().zip(&dhidden) {
                    *g += scale * x * dh;
                }
            }
        }
        for (g, &dh) in acc_b1.iter_mut().zip(&dhidden) {
            *g += scale * dh;
        }
    }
}

/// Which synthetic family `make_synthetic_federation` generates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    LeastSquares,
    Logistic,
}

pub const DEFAULT_SAMPLES_PER_DEVICE: usize = 128;

/// Build a K-device synthetic federation. Each device draws samples from a
/// data-generating model whose optimum is shifted from a shared one by a
/// Gaussian offset of expected norm `heterogeneity`, so gradient dispersion
/// across devices grows monotonically with the knob. Deterministic given
/// `seed`.
pub fn make_synthetic_federation(
    kind: SyntheticKind,
    devices: usize,
    dim: usize,
    heterogeneity: f64,
    seed: u64,
) -> (Objective, Vec<DataShard>) {
    make_synthetic_federation_with(
        kind,
        devices,
        dim,
        heterogeneity,
        DEFAULT_SAMPLES_PER_DEVICE,
        seed,
    )
}

pub fn make_synthetic_federation_with(
    kind: SyntheticKind,
    devices: usize,
    dim: usize,
    heterogeneity: f64,
    samples_per_device: usize,
    seed: u64,
) -> (Objective, Vec<DataShard>) {
    assert!(devices >= 1 && dim >= 1 && samples_per_device >= 1);

    let mut root = rng::substream(seed, rng::SERVER, 0, Purpose::Data);
    // shared data-generating optimum with expected unit norm
    let base_scale = 1.0 / (dim as f64).sqrt();
    let shared_opt: Vec<f64> = (0..dim)
        .map(|_| base_scale * root.sample::<f64, _>(StandardNormal))
        .collect();

    let shift_scale = heterogeneity / (dim as f64).sqrt();
    let shards = (0..devices)
        .map(|k| {
            let mut dev_rng = rng::substream(seed, k as u32, 0, Purpose::Data);
            // per-device optimum: shared + offset of expected norm = the knob
            let opt: Vec<f64> = shared_opt
                .iter()
                .map(|&w| w + shift_scale * dev_rng.sample::<f64, _>(StandardNormal))
                .collect();
            let samples = (0..samples_per_device)
                .map(|_| {
                    let features: Vec<f64> = (0..dim)
                        .map(|_| dev_rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let margin = dot(&opt, &features);
                    let label = match kind {
                        SyntheticKind::LeastSquares => {
                            margin + 0.1 * dev_rng.sample::<f64, _>(StandardNormal)
                        }
                        SyntheticKind::Logistic => {
                            let p_plus = sigmoid(2.0 * margin);
                            if dev_rng.gen::<f64>() < p_plus {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                    };
                    Sample { features, label }
                })
                .collect();
            DataShard { owner: k, samples }
        })
        .collect();

    let objective = match kind {
        SyntheticKind::LeastSquares => Objective::least_squares(dim),
        SyntheticKind::Logistic => Objective::logistic(dim),
    };
    (objective, shards)
}

/// Exact local gradient of device `k`'s empirical loss (full shard).
pub fn local_gradient(objective: &Objective, theta: &[f64], shard: &DataShard) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    let w = 1.0 / shard.samples.len() as f64;
    for s in &shard.samples {
        objective.accumulate_sample_grad(theta, s, w, &mut g);
    }
    g
}

/// Mean over random probe points of the worst per-device gradient
/// dispersion `max_k ||grad f_k - grad f||^2`. Used to check that the
/// heterogeneity knob behaves monotonically.
pub fn gradient_dispersion_proxy(
    objective: &Objective,
    shards: &[DataShard],
    probes: usize,
    seed: u64,
) -> f64 {
    let dim = objective.dim();
    let mut rng = rng::substream(seed, rng::SERVER, 0, Purpose::Probe);
    let mut total = 0.0;
    for _ in 0..probes {
        let theta: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let per_device: Vec<Vec<f64>> = shards
            .iter()
            .map(|s| local_gradient(objective, &theta, s))
            .collect();
        let mut global = vec![0.0; dim];
        for g in &per_device {
            axpy_local(&mut global, 1.0 / shards.len() as f64, g);
        }
        let worst = per_device
            .iter()
            .map(|g| {
                let diff: Vec<f64> = g.iter().zip(&global).map(|(a, b)| a - b).collect();
                norm_sq(&diff)
            })
            .fold(0.0, f64::max);
        total += worst;
    }
    total / probes as f64
}

fn axpy_local(a: &mut [f64], s: f64, b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += s * y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn finite_diff_grad(obj: &Objective, theta: &[f64], sample: &Sample, coords: &[usize]) -> Vec<f64> {
        let h = 1e-5;
        coords
            .iter()
            .map(|&j| {
                let mut plus = theta.to_vec();
                let mut minus = theta.to_vec();
                plus[j] += h;
                minus[j] -= h;
                (obj.sample_loss(&plus, sample) - obj.sample_loss(&minus, sample)) / (2.0 * h)
            })
            .collect()
    }

    fn check_gradient(obj: &Objective, theta: &[f64], sample: &Sample, coords: &[usize]) {
        let analytic = obj.sample_grad(theta, sample);
        let numeric = finite_diff_grad(obj, theta, sample, coords);
        for (&j, &fd) in coords.iter().zip(&numeric) {
            let a = analytic[j];
            let scale = a.abs().max(fd.abs()).max(1e-6);
            assert!(
                (a - fd).abs() / scale <= 1e-4,
                "coord {j}: analytic {a}, finite-diff {fd}"
            );
        }
    }

    #[test]
    fn least_squares_hand_gradient() {
        // single sample x=[1,0], y=0, theta=[2,3]: residual 2, grad = r*x = [2,0]
        let obj = Objective::least_squares(2);
        let s = Sample {
            features: vec![1.0, 0.0],
            label: 0.0,
        };
        let g = obj.sample_grad(&[2.0, 3.0], &s);
        assert_eq!(g, vec![2.0, 0.0]);
        assert_eq!(obj.sample_loss(&[2.0, 3.0], &s), 2.0);
    }

    #[test]
    fn quadratic_loss_at_zero() {
        // 0.5 * y^2 with y = 2 -> loss 2
        let obj = Objective::least_squares(1);
        let s = Sample {
            features: vec![1.0],
            label: 2.0,
        };
        assert_eq!(obj.sample_loss(&[0.0], &s), 2.0);
    }

    #[test]
    fn gradients_match_finite_differences_all_kinds() {
        let mut rng = rng::substream(99, 0, 0, Purpose::Probe);
        for trial in 0..100 {
            let obj = match trial % 3 {
                0 => Objective::least_squares(8),
                1 => Objective::logistic(8),
                _ => Objective::MnistMlp {
                    input: 6,
                    hidden: 5,
                    classes: 3,
                },
            };
            let d = obj.dim();
            let theta: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let (features, label) = match obj {
                Objective::MnistMlp { input, classes, .. } => {
                    let f: Vec<f64> = (0..input).map(|_| rng.gen::<f64>()).collect();
                    (f, (rng.gen::<u32>() % classes as u32) as f64)
                }
                _ => {
                    let f: Vec<f64> =
                        (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let y = if matches!(obj, Objective::Logistic { .. }) {
                        if rng.gen::<bool>() {
                            1.0
                        } else {
                            -1.0
                        }
                    } else {
                        rng.sample::<f64, _>(StandardNormal)
                    };
                    (f, y)
                }
            };
            let sample = Sample { features, label };
            // all coordinates for the small models, a random subset for the MLP
            let coords: Vec<usize> = if d <= 16 {
                (0..d).collect()
            } else {
                (0..20).map(|_| (rng.gen::<u64>() % d as u64) as usize).collect()
            };
            check_gradient(&obj, &theta, &sample, &coords);
        }
    }

    #[test]
    fn mlp_dimension_is_79510() {
        assert_eq!(Objective::mnist_mlp().dim(), 79_510);
    }

    #[test]
    fn synthetic_federation_is_deterministic() {
        let (_, a) = make_synthetic_federation(SyntheticKind::Logistic, 4, 10, 1.0, 5);
        let (_, b) = make_synthetic_federation(SyntheticKind::Logistic, 4, 10, 1.0, 5);
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa.samples.len(), sb.samples.len());
            for (x, y) in sa.samples.iter().zip(&sb.samples) {
                assert_eq!(x.label.to_bits(), y.label.to_bits());
                let fx: Vec<u64> = x.features.iter().map(|v| v.to_bits()).collect();
                let fy: Vec<u64> = y.features.iter().map(|v| v.to_bits()).collect();
                assert_eq!(fx, fy);
            }
        }
    }

    #[test]
    fn heterogeneity_knob_is_monotone() {
        let disp = |het: f64| {
            let (obj, shards) = make_synthetic_federation_with(
                SyntheticKind::LeastSquares,
                6,
                16,
                het,
                1024,
                11,
            );
            gradient_dispersion_proxy(&obj, &shards, 10, 42)
        };
        let d0 = disp(0.0);
        let d_half = disp(0.5);
        let d_two = disp(2.0);
        assert!(
            d_two > d_half,
            "dispersion should grow with heterogeneity: {d_half} vs {d_two}"
        );
        // homogeneous case: only sampling noise remains
        assert!(d0 < d_two * 0.25, "het=0 dispersion {d0} vs het=2 {d_two}");
    }

    #[test]
    fn identical_samples_share_gradient() {
        let obj = Objective::logistic(3);
        let s = Sample {
            features: vec![0.5, -1.0, 2.0],
            label: 1.0,
        };
        let theta = [0.1, 0.2, -0.3];
        let one = obj.sample_grad(&theta, &s);
        let mut two = vec![0.0; 3];
        obj.accumulate_sample_grad(&theta, &s, 0.5, &mut two);
        obj.accumulate_sample_grad(&theta, &s, 0.5, &mut two);
        for (a, b) in one.iter().zip(&two) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
