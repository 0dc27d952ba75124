//! Exact O(n^2) t-SNE with per-point bandwidth calibration by bisection,
//! early exaggeration, and momentum gradient descent.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub init_sd: f64,
}

impl TsneConfig {
    pub fn new(perplexity: f64, iterations: usize, seed: u64) -> Self {
        TsneConfig {
            perplexity,
            iterations,
            seed,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            init_sd: 1e-4,
        }
    }
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig::new(30.0, 1000, 0)
    }
}

#[derive(Debug, Clone)]
pub struct TsneResult {
    /// n x 2 embedding coordinates.
    pub coords: Array2<f64>,
    pub kl_initial: f64,
    pub kl_final: f64,
    pub config: TsneConfig,
}

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for c in 0..x.ncols() {
                let diff = x[(i, c)] - x[(j, c)];
                s += diff * diff;
            }
            d[(i, j)] = s;
            d[(j, i)] = s;
        }
    }
    d
}

/// Symmetrized joint probabilities with per-point Gaussian bandwidths found
/// by bisection so that every conditional distribution has entropy
/// ln(perplexity) within 1e-5.
pub fn joint_probabilities(x: &Array2<f64>, perplexity: f64) -> Result<Array2<f64>> {
    let cond = conditional_probabilities(x, perplexity)?;
    let n = x.nrows();
    let mut joint = Array2::zeros((n, n));
    let norm = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            joint[(i, j)] = (cond[(i, j)] + cond[(j, i)]) / norm;
        }
    }
    Ok(joint)
}

/// Row i holds P(j | i) under the bandwidth calibrated for point i.
fn conditional_probabilities(x: &Array2<f64>, perplexity: f64) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < 4 {
        return Err(Error::TooFewSamples {
            needed: 4,
            found: n,
            context: "tsne".into(),
        });
    }
    if perplexity.is_nan() || perplexity <= 1.0 || perplexity >= n as f64 {
        return Err(Error::PerplexityOutOfRange { perplexity, n });
    }
    let target_entropy = perplexity.ln();
    let d2 = squared_distances(x);

    let mut cond = Array2::zeros((n, n));
    let mut weights = vec![0.0f64; n];
    for i in 0..n {
        // shift by the smallest positive-pair distance for a stable exp
        let mut dmin = f64::INFINITY;
        for j in 0..n {
            if j != i {
                dmin = dmin.min(d2[(i, j)]);
            }
        }
        let mut beta = 1.0f64;
        let mut beta_lo = f64::NEG_INFINITY;
        let mut beta_hi = f64::INFINITY;
        let mut converged = false;
        for _ in 0..MAX_BISECTIONS {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                if j == i {
                    weights[j] = 0.0;
                    continue;
                }
                let shifted = d2[(i, j)] - dmin;
                let w = (-beta * shifted).exp();
                weights[j] = w;
                sum += w;
                weighted += w * shifted;
            }
            // entropy of the normalized conditional, invariant to the shift
            let entropy = sum.ln() + beta * weighted / sum;
            let diff = entropy - target_entropy;
            if diff.abs() <= ENTROPY_TOL {
                converged = true;
                break;
            }
            if diff > 0.0 {
                beta_lo = beta;
                beta = if beta_hi.is_finite() {
                    (beta + beta_hi) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                beta_hi = beta;
                beta = if beta_lo.is_finite() {
                    (beta + beta_lo) / 2.0
                } else {
                    beta / 2.0
                };
            }
        }
        if !converged {
            let mut dupes: Vec<usize> =
                (0..n).filter(|&j| j != i && d2[(i, j)] == 0.0).collect();
            if !dupes.is_empty() {
                dupes.push(i);
                dupes.sort_unstable();
                return Err(Error::DuplicatePoints { indices: dupes });
            }
            return Err(Error::invalid(
                "tsne bandwidth search",
                format!("no bandwidth reaches entropy ln({perplexity}) at point {i}"),
            ));
        }
        let sum: f64 = weights.iter().sum();
        for j in 0..n {
            cond[(i, j)] = weights[j] / sum;
        }
    }
    Ok(cond)
}

/// Student-t normalizer over all pairs in the embedding.
fn q_normalizer(y: &Array2<f64>) -> f64 {
    let n = y.nrows();
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[(i, 0)] - y[(j, 0)];
            let dy = y[(i, 1)] - y[(j, 1)];
            z += 2.0 / (1.0 + dx * dx + dy * dy);
        }
    }
    z
}

/// KL(P || Q) of the embedding `y` under joint probabilities `p`.
pub fn kl_divergence(p: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let n = y.nrows();
    let z = q_normalizer(y);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j || p[(i, j)] <= 0.0 {
                continue;
            }
            let dx = y[(i, 0)] - y[(j, 0)];
            let dy = y[(i, 1)] - y[(j, 1)];
            let q = 1.0 / ((1.0 + dx * dx + dy * dy) * z);
            kl += p[(i, j)] * (p[(i, j)] / q).ln();
        }
    }
    kl
}

/// Analytic gradient of [`kl_divergence`] with respect to `y`:
/// dC/dy_i = 4 sum_j (p_ij - q_ij) (1 + ||y_i - y_j||^2)^-1 (y_i - y_j).
pub fn kl_gradient(p: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let n = y.nrows();
    let z = q_normalizer(y);
    let mut grad = Array2::zeros((n, 2));
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[(i, 0)] - y[(j, 0)];
            let dy = y[(i, 1)] - y[(j, 1)];
            let qnum = 1.0 / (1.0 + dx * dx + dy * dy);
            let q = qnum / z;
            let f = 4.0 * (p[(i, j)] - q) * qnum;
            grad[(i, 0)] += f * dx;
            grad[(i, 1)] += f * dy;
            grad[(j, 0)] -= f * dx;
            grad[(j, 1)] -= f * dy;
        }
    }
    grad
}

/// Exact t-SNE to two dimensions. Deterministic given the config seed.
pub fn tsne_embed(x: &Array2<f64>, config: &TsneConfig) -> Result<TsneResult> {
    if config.iterations == 0 {
        return Err(Error::invalid("tsne", "iterations must be >= 1"));
    }
    let p = joint_probabilities(x, config.perplexity)?;
    let n = x.nrows();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, config.init_sd)
        .map_err(|e| Error::invalid("tsne init", e.to_string()))?;
    let mut y = Array2::from_shape_fn((n, 2), |_| init.sample(&mut rng));

    let kl_initial = kl_divergence(&p, &y);

    let p_exaggerated = &p * config.early_exaggeration;
    let mut velocity: Array2<f64> = Array2::zeros((n, 2));
    let mut gains: Array2<f64> = Array2::ones((n, 2));
    for it in 0..config.iterations {
        let p_now = if it < config.exaggeration_iters {
            &p_exaggerated
        } else {
            &p
        };
        let grad = kl_gradient(p_now, &y);
        let momentum = if it < config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        // per-coordinate gains: grow while the gradient keeps its direction
        // against the velocity, shrink when it flips
        for ((g, &d), &v) in gains.iter_mut().zip(grad.iter()).zip(velocity.iter()) {
            *g = if (d > 0.0) != (v > 0.0) {
                *g + 0.2
            } else {
                (*g * 0.8).max(0.01)
            };
        }
        for ((v, &d), &g) in velocity.iter_mut().zip(grad.iter()).zip(gains.iter()) {
            *v = momentum * *v - config.learning_rate * g * d;
        }
        y += &velocity;
        // keep the embedding centered
        let mean = y.mean_axis(Axis(0)).expect("n >= 4");
        y -= &mean;
    }

    let kl_final = kl_divergence(&p, &y);
    if !kl_final.is_finite() || !y.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid(
            "tsne",
            "optimization diverged to non-finite coordinates".to_string(),
        ));
    }
    Ok(TsneResult {
        coords: y,
        kl_initial,
        kl_final,
        config: *config,
    })
}
