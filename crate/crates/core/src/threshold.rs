//! Truncation-threshold design.
//!
//! Minimizes, over the per-device transmission probabilities
//! `lambda_k = exp(-eps_k)`, the channel-dependent part of the long-term
//! memory convergence bound:
//!
//! ```text
//! (1/K) sum_k 48 (1 - l_k^2)/l_k^2 eta^2 B^2 Q^2 L^2
//!   + (8 eta L sigma^2 / K^2) max_k [ l_k B^2 Q (4(1-l_k^2)/l_k^2 + 1)
//!                                     / (P_k kappa_k ln(1/l_k)) ]
//! ```
//!
//! The problem is convex on (0,1)^K. The solver runs a projected
//! subgradient stage with diminishing Polyak-style steps and then polishes
//! the epigraph level with an exact one-dimensional reduction: for a fixed
//! level `t` of the max term, the sum term is minimized by pushing every
//! `lambda_k` to the largest value whose noise function stays below `t`,
//! and the resulting one-dimensional function of `t` is convex.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-device power-side constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DevicePower {
    pub power: f64,
    pub kappa: f64,
}

/// Inputs to the threshold design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptInputs {
    pub eta: f64,
    pub l: f64,
    pub b: f64,
    pub local_steps: usize,
    pub sigma2: f64,
    pub devices: Vec<DevicePower>,
    /// Domain clip: lambdas live in [lambda_min, 1 - lambda_min]. The
    /// objective diverges at both ends, so for sigma2 > 0 the true optimum
    /// is interior and the clip only guards numerics.
    pub lambda_min: f64,
}

pub const DEFAULT_LAMBDA_MIN: f64 = 1e-4;
pub const DEFAULT_TOL: f64 = 1e-6;

impl OptInputs {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta", self.eta), ("l", self.l), ("b", self.b)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.local_steps < 1 {
            return Err(Error::Config("local_steps must be >= 1".into()));
        }
        if !(self.sigma2 >= 0.0) {
            return Err(Error::Config(format!(
                "sigma2 must be >= 0, got {}",
                self.sigma2
            )));
        }
        if self.devices.is_empty() {
            return Err(Error::Config("at least one device required".into()));
        }
        for (k, d) in self.devices.iter().enumerate() {
            if !(d.power > 0.0 && d.kappa > 0.0) {
                return Err(Error::Config(format!(
                    "device {k}: power and kappa must be positive"
                )));
            }
        }
        if !(self.lambda_min > 0.0 && self.lambda_min < 0.5) {
            return Err(Error::Config(format!(
                "lambda_min must lie in (0, 0.5), got {}",
                self.lambda_min
            )));
        }
        Ok(())
    }

    /// Coefficient of each g(lambda_k) in the sum term: 48 eta^2 B^2 Q^2 L^2.
    fn sum_coeff(&self) -> f64 {
        let q = self.local_steps as f64;
        48.0 * self.eta * self.eta * self.b * self.b * q * q * self.l * self.l
    }

    /// Coefficient of the max term: 8 eta L sigma^2 / K^2.
    fn noise_coeff(&self) -> f64 {
        let k = self.devices.len() as f64;
        8.0 * self.eta * self.l * self.sigma2 / (k * k)
    }

    /// b_k of the per-device noise function f_k: B^2 Q / (P_k kappa_k).
    fn device_coeff(&self, k: usize) -> f64 {
        let q = self.local_steps as f64;
        self.b * self.b * q / (self.devices[k].power * self.devices[k].kappa)
    }

    fn lo(&self) -> f64 {
        self.lambda_min
    }

    fn hi(&self) -> f64 {
        1.0 - self.lambda_min
    }
}

/// g(x) = (1 - x^2) / x^2.
fn g_shape(x: f64) -> f64 {
    (1.0 - x * x) / (x * x)
}

fn g_shape_deriv(x: f64) -> f64 {
    -2.0 / (x * x * x)
}

/// Noise shape (4 (1 - x^2)/x + x) / ln(1/x); the numerator is
/// x * (C_tilde at x).
fn f_shape(x: f64) -> f64 {
    (4.0 * (1.0 - x * x) / x + x) / (1.0 / x).ln()
}

fn f_shape_deriv(x: f64) -> f64 {
    // f = u / w, u = 4/x - 3x, w = ln(1/x), w' = -1/x
    let u = 4.0 / x - 3.0 * x;
    let w = (1.0 / x).ln();
    let up = -4.0 / (x * x) - 3.0;
    (up * w + u / x) / (w * w)
}

/// Closed-form second derivative of the noise shape (b = 1); certified
/// against central differences below.
pub fn f_shape_second_deriv(x: f64) -> f64 {
    let w = (1.0 / x).ln();
    let x3 = x * x * x;
    (8.0 * (w * w + 1.0) / x3 + (-12.0 / x3 - 3.0 / x) * w - 6.0 / x) / (w * w * w)
}

/// The objective of the reformulated threshold problem at `lambdas`.
pub fn objective_p1prime(lambdas: &[f64], inputs: &OptInputs) -> Result<f64> {
    inputs.validate()?;
    if lambdas.len() != inputs.devices.len() {
        return Err(Error::Dimension {
            expected: inputs.devices.len(),
            got: lambdas.len(),
        });
    }
    for (k, &l) in lambdas.iter().enumerate() {
        if !(l >= inputs.lo() && l <= inputs.hi()) {
            return Err(Error::Domain(format!(
                "lambda[{k}] = {l} outside [{}, {}]",
                inputs.lo(),
                inputs.hi()
            )));
        }
    }
    Ok(objective_unchecked(lambdas, inputs))
}

fn objective_unchecked(lambdas: &[f64], inputs: &OptInputs) -> f64 {
    let k = inputs.devices.len() as f64;
    let sum: f64 = lambdas.iter().map(|&l| g_shape(l)).sum();
    let sum_term = inputs.sum_coeff() / k * sum;
    let noise_term = if inputs.sigma2 == 0.0 {
        0.0
    } else {
        inputs.noise_coeff() * max_noise(lambdas, inputs)
    };
    sum_term + noise_term
}

fn max_noise(lambdas: &[f64], inputs: &OptInputs) -> f64 {
    lambdas
        .iter()
        .enumerate()
        .map(|(k, &l)| inputs.device_coeff(k) * f_shape(l))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn argmax_noise(lambdas: &[f64], inputs: &OptInputs) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, &l) in lambdas.iter().enumerate() {
        let v = inputs.device_coeff(k) * f_shape(l);
        if v > best_v {
            best_v = v;
            best = k;
        }
    }
    best
}

/// Solver output: probabilities, thresholds `eps = -ln(lambda)`, and the
/// objective split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdSolution {
    pub lambdas: Vec<f64>,
    pub eps: Vec<f64>,
    pub objective: f64,
    pub sum_term: f64,
    pub noise_term: f64,
    pub iterations: usize,
}

/// Deterministic golden-section minimizer on [lo, hi].
fn golden_min(mut lo: f64, mut hi: f64, iters: usize, f: impl Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Largest lambda in [minimizer_k, hi] whose noise value stays below `level`,
/// found by bisection on the increasing branch of f_k.
fn lambda_for_level(level: f64, k: usize, f_min_arg: f64, inputs: &OptInputs) -> f64 {
    let hi = inputs.hi();
    let bk = inputs.device_coeff(k);
    if bk * f_shape(hi) <= level {
        return hi;
    }
    let mut lo = f_min_arg;
    let mut up = hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + up);
        if bk * f_shape(mid) <= level {
            lo = mid;
        } else {
            up = mid;
        }
    }
    lo
}

/// Solve the threshold problem. Stage 1 is a projected subgradient descent
/// with diminishing steps; stage 2 polishes the epigraph level t with a
/// golden-section search, using the exact per-level coordinate solution.
/// Fully deterministic: identical inputs give identical output bits.
pub fn solve_thresholds(inputs: &OptInputs, tol: f64) -> Result<ThresholdSolution> {
    inputs.validate()?;
    let k = inputs.devices.len();
    let lo = inputs.lo();
    let hi = inputs.hi();

    // Noiseless case: the objective is the sum term alone, monotone
    // decreasing in every lambda, so the optimum sits at the upper clip.
    if inputs.sigma2 == 0.0 {
        let lambdas = vec![hi; k];
        let objective = objective_unchecked(&lambdas, inputs);
        return Ok(finish(lambdas, objective, 0, inputs));
    }

    let proj = |x: f64| x.clamp(lo, hi);

    // --- stage 1: projected subgradient ---
    let mut x = vec![0.5f64; k];
    let mut best = x.clone();
    let mut best_f = objective_unchecked(&x, inputs);
    let sum_c = inputs.sum_coeff() / k as f64;
    let noise_c = inputs.noise_coeff();
    let iters_sub = 800;
    for i in 0..iters_sub {
        let fx = objective_unchecked(&x, inputs);
        if fx < best_f {
            best_f = fx;
            best = x.clone();
        }
        let mut sg = vec![0.0; k];
        for (j, v) in sg.iter_mut().enumerate() {
            *v = sum_c * g_shape_deriv(x[j]);
        }
        let am = argmax_noise(&x, inputs);
        sg[am] += noise_c * inputs.device_coeff(am) * f_shape_deriv(x[am]);
        let norm_sq: f64 = sg.iter().map(|v| v * v).sum();
        if norm_sq <= 1e-30 {
            break;
        }
        // Polyak-style step toward a diminishing target below the best seen
        let target_gap = best_f * 0.05 / (1.0 + i as f64 / 40.0);
        let step = (fx - best_f + target_gap) / norm_sq;
        for (xv, g) in x.iter_mut().zip(&sg) {
            *xv = proj(*xv - step * g);
        }
    }

    // --- stage 2: golden-section on the epigraph level ---
    // per-device minimizer of the noise shape (shared by all k up to the
    // b_k scaling, since argmin of b*f equals argmin of f)
    let f_min_arg = golden_min(lo, hi, 160, f_shape);
    let t_lo = (0..k)
        .map(|j| inputs.device_coeff(j) * f_shape(f_min_arg))
        .fold(f64::NEG_INFINITY, f64::max);
    let t_best = max_noise(&best, inputs).max(t_lo);
    // bracket the level: expand upward until the objective stops improving
    let phi = |t: f64| {
        let lams: Vec<f64> = (0..k)
            .map(|j| lambda_for_level(t, j, f_min_arg, inputs))
            .collect();
        objective_unchecked(&lams, inputs)
    };
    let mut t_hi = (t_best * 2.0).max(t_lo * 2.0);
    let mut guard = 0;
    while phi(t_hi * 2.0) < phi(t_hi) && guard < 200 {
        t_hi *= 2.0;
        guard += 1;
    }
    let t_star = golden_min(t_lo, t_hi * 2.0, 220, phi);
    let lambdas: Vec<f64> = (0..k)
        .map(|j| lambda_for_level(t_star, j, f_min_arg, inputs))
        .collect();
    let obj_polished = objective_unchecked(&lambdas, inputs);

    let (lambdas, objective) = if obj_polished <= best_f {
        (lambdas, obj_polished)
    } else {
        (best, best_f)
    };

    // first-order certificate on a coordinate grid through the solution
    let residual = grid_suboptimality(&lambdas, objective, inputs, 1000);
    if residual > tol {
        return Err(Error::NonConvergence {
            best: lambdas,
            residual,
            iters: iters_sub + 220,
        });
    }

    Ok(finish(lambdas, objective, iters_sub + 220, inputs))
}

fn finish(lambdas: Vec<f64>, objective: f64, iterations: usize, inputs: &OptInputs) -> ThresholdSolution {
    let k = inputs.devices.len() as f64;
    let sum_term = inputs.sum_coeff() / k * lambdas.iter().map(|&l| g_shape(l)).sum::<f64>();
    let noise_term = objective - sum_term;
    let eps = lambdas.iter().map(|&l| -(l.ln())).collect();
    ThresholdSolution {
        lambdas,
        eps,
        objective,
        sum_term,
        noise_term,
        iterations,
    }
}

/// Largest objective improvement available on a per-coordinate grid of
/// `points` values through `lambdas`; 0 when no grid point beats it.
pub fn grid_suboptimality(
    lambdas: &[f64],
    objective: f64,
    inputs: &OptInputs,
    points: usize,
) -> f64 {
    let lo = inputs.lo();
    let hi = inputs.hi();
    let mut worst: f64 = 0.0;
    let mut probe = lambdas.to_vec();
    for j in 0..lambdas.len() {
        let keep = probe[j];
        for i in 0..=points {
            probe[j] = lo + (hi - lo) * i as f64 / points as f64;
            let v = objective_unchecked(&probe, inputs);
            worst = worst.max(objective - v);
        }
        probe[j] = keep;
    }
    worst
}

/// Numerical convexity certificate for the two shape functions of the
/// objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub grid_points: usize,
    pub min_second_diff_g: f64,
    pub min_second_diff_f: f64,
    /// Largest relative disagreement between the finite-difference and the
    /// closed-form second derivative of the noise shape.
    pub max_rel_err_f_second: f64,
    pub second_diff_scale_g: f64,
    pub second_diff_scale_f: f64,
    pub pass: bool,
}

/// Evaluate second central differences of `a * g` and `b_k * f` on a grid
/// over (lambda_min, 1 - lambda_min), and cross-check the closed-form
/// second derivative of the noise shape at every grid point.
pub fn certify_convexity(inputs: &OptInputs, grid_resolution: usize) -> Result<ConvexityReport> {
    inputs.validate()?;
    if grid_resolution < 100 {
        return Err(Error::Config(format!(
            "grid_resolution must be >= 100, got {grid_resolution}"
        )));
    }
    let a = inputs.sum_coeff();
    let bks: Vec<f64> = if inputs.sigma2 > 0.0 {
        (0..inputs.devices.len())
            .map(|kk| inputs.noise_coeff() * inputs.device_coeff(kk))
            .collect()
    } else {
        vec![1.0] // sigma2 = 0: certify the unit-coefficient shape
    };

    let lo = inputs.lo();
    let hi = inputs.hi();
    let mut min_g = f64::INFINITY;
    let mut min_f = f64::INFINITY;
    let mut scale_g: f64 = 0.0;
    let mut scale_f: f64 = 0.0;
    let mut max_rel = 0.0f64;

    for i in 1..grid_resolution {
        let x = lo + (hi - lo) * i as f64 / grid_resolution as f64;
        // the shapes steepen near both ends; shrink the step there
        let h = 1e-4f64.min((1.0 - x) / 64.0).min(x / 64.0);
        let d2g = a * (g_shape(x + h) - 2.0 * g_shape(x) + g_shape(x - h)) / (h * h);
        min_g = min_g.min(d2g);
        scale_g = scale_g.max(d2g.abs());
        let d2f_unit = (f_shape(x + h) - 2.0 * f_shape(x) + f_shape(x - h)) / (h * h);
        let closed = f_shape_second_deriv(x);
        max_rel = max_rel.max((d2f_unit - closed).abs() / closed.abs().max(1e-300));
        for &bk in &bks {
            let d2f = bk * d2f_unit;
            min_f = min_f.min(d2f);
            scale_f = scale_f.max(d2f.abs());
        }
    }

    let pass = min_g >= -1e-9 * scale_g && min_f >= -1e-9 * scale_f && max_rel <= 1e-3;
    Ok(ConvexityReport {
        grid_points: grid_resolution - 1,
        min_second_diff_g: min_g,
        min_second_diff_f: min_f,
        max_rel_err_f_second: max_rel,
        second_diff_scale_g: scale_g,
        second_diff_scale_f: scale_f,
        pass,
    })
}
