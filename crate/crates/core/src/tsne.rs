//! Exact (O(n²)) t-SNE to two dimensions.
//!
//! Hyperparameters follow common practice: perplexity min(30, ⌊(n−1)/3⌋), 1000
//! iterations, learning rate 200, early exaggeration 12 for the first 250
//! iterations, momentum 0.5 switching to 0.8 at iteration 250, per-coordinate
//! adaptive gains, and a Gaussian initialization with standard deviation 1e-4.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stop the bandwidth search once the row entropy is this close to the target (bits).
/// Keeps `2^H` within 1e-4 of any perplexity up to 100.
pub const ENTROPY_TOLERANCE: f64 = 1e-6;
pub const MAX_BISECTION_STEPS: usize = 50;
/// Lower bound applied to joint probabilities inside the gradient.
pub const P_FLOOR: f64 = 1e-12;
/// KL divergence is recorded every this many iterations.
pub const KL_TRACE_INTERVAL: usize = 10;
const INIT_STD: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TsneError {
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("perplexity {perplexity} must be positive and below the point count {n}")]
    InvalidPerplexity { perplexity: f64, n: usize },
    #[error("non-finite distance between points {i} and {j}")]
    NonFinite { i: usize, j: usize },
    #[error("point {index} has {found} components, expected {expected}")]
    DimMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize },
}

pub type Result<T> = std::result::Result<T, TsneError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// `None` picks min(30, ⌊(n−1)/3⌋), at least 1.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            perplexity: None,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

impl ProjectionConfig {
    pub fn with_seed(seed: u64) -> Self {
        ProjectionConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn perplexity_for(&self, n: usize) -> f64 {
        self.perplexity
            .unwrap_or_else(|| (n.saturating_sub(1) / 3).clamp(1, 30) as f64)
    }
}

/// Row-major n×n matrix of squared Euclidean distances.
pub fn squared_distances<V: AsRef<[f32]>>(points: &[V]) -> Result<Vec<f64>> {
    let n = points.len();
    let dim = points.first().map_or(0, |p| p.as_ref().len());
    for (index, p) in points.iter().enumerate() {
        if p.as_ref().len() != dim {
            return Err(TsneError::DimMismatch {
                index,
                expected: dim,
                found: p.as_ref().len(),
            });
        }
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let dist: f64 = points[i]
                .as_ref()
                .iter()
                .zip(points[j].as_ref())
                .map(|(&a, &b)| {
                    let diff = a as f64 - b as f64;
                    diff * diff
                })
                .sum();
            d[i * n + j] = dist;
            d[j * n + i] = dist;
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub n: usize,
    /// Gaussian bandwidth per point.
    pub sigmas: Vec<f64>,
    /// Row-major conditional probabilities p(j|i); rows sum to 1, diagonal 0.
    pub conditionals: Vec<f64>,
    /// Shannon entropy of each conditional row, in bits.
    pub entropies: Vec<f64>,
}

/// Probabilities exp(-beta * (d - d_min)) over the off-diagonal of one row,
/// normalized, with the row entropy in bits.
fn row_distribution(row: &[f64], i: usize, d_min: f64, beta: f64, out: &mut [f64]) -> f64 {
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (j, &d) in row.iter().enumerate() {
        if j == i {
            out[j] = 0.0;
            continue;
        }
        let shifted = d - d_min;
        let w = (-beta * shifted).exp();
        out[j] = w;
        z += w;
        weighted += w * shifted;
    }
    for p in out.iter_mut() {
        *p /= z;
    }
    // H = ln Z + beta * E[d - d_min], converted to bits.
    (z.ln() + beta * weighted / z) / std::f64::consts::LN_2
}

/// Binary search per point for the bandwidth whose conditional distribution has
/// entropy log2(perplexity).
pub fn perplexity_calibration(distances: &[f64], n: usize, perplexity: f64) -> Result<Calibration> {
    if n < 2 {
        return Err(TsneError::TooFewPoints { needed: 2, found: n });
    }
    if !(perplexity > 0.0 && perplexity < n as f64) {
        return Err(TsneError::InvalidPerplexity { perplexity, n });
    }
    if let Some(pos) = distances.iter().position(|d| !d.is_finite()) {
        return Err(TsneError::NonFinite {
            i: pos / n,
            j: pos % n,
        });
    }

    let target = perplexity.log2();
    let mut conditionals = vec![0.0; n * n];
    let mut sigmas = Vec::with_capacity(n);
    let mut entropies = Vec::with_capacity(n);
    for i in 0..n {
        let row = &distances[i * n..(i + 1) * n];
        let out = &mut conditionals[i * n..(i + 1) * n];
        let others = || row.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, &d)| d);
        let d_min = others().fold(f64::INFINITY, f64::min);
        let mean = others().map(|d| d - d_min).sum::<f64>() / (n - 1) as f64;

        let mut beta = if mean > 0.0 { 1.0 / mean } else { 1.0 };
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut entropy = row_distribution(row, i, d_min, beta, out);
        for _ in 0..MAX_BISECTION_STEPS {
            let diff = entropy - target;
            if diff.abs() < ENTROPY_TOLERANCE {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (lo + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (lo + hi) / 2.0;
            }
            entropy = row_distribution(row, i, d_min, beta, out);
        }
        sigmas.push((1.0 / (2.0 * beta)).sqrt());
        entropies.push(entropy);
    }
    Ok(Calibration {
        n,
        sigmas,
        conditionals,
        entropies,
    })
}

/// Symmetric joint probabilities P = (C + Cᵀ) / 2n with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub n: usize,
    pub p: Vec<f64>,
}

impl AffinityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn sum(&self) -> f64 {
        self.p.iter().sum()
    }
}

pub fn joint_affinities(conditionals: &[f64], n: usize) -> AffinityMatrix {
    let mut p = vec![0.0; n * n];
    let scale = 2.0 * n as f64;
    for i in 0..n {
        for j in i + 1..n {
            let v = (conditionals[i * n + j] + conditionals[j * n + i]) / scale;
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    AffinityMatrix { n, p }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    /// KL(P‖Q) after iterations 10, 20, ...
    pub kl_trace: Vec<f64>,
    pub perplexity: f64,
}

impl Projection {
    /// KL divergence recorded right after `iteration`, if it was sampled.
    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        if iteration == 0 || !iteration.is_multiple_of(KL_TRACE_INTERVAL) {
            return None;
        }
        self.kl_trace.get(iteration / KL_TRACE_INTERVAL - 1).copied()
    }
}

fn lexicographic(a: &[f32], b: &[f32]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Student-t kernel matrix (zero diagonal) and its off-diagonal sum.
fn student_t(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

fn kl_divergence(p: &AffinityMatrix, num: &[f64], sum: f64) -> f64 {
    p.p.iter()
        .zip(num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij / (nij / sum)).ln())
        .sum()
}

fn center(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let mx = y.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = y.iter().map(|p| p[1]).sum::<f64>() / n;
    for p in y.iter_mut() {
        p[0] -= mx;
        p[1] -= my;
    }
}

/// Embed `points` in 2D by gradient descent on KL(P‖Q).
///
/// Points are processed in a canonical (lexicographic) order internally, so the
/// output for a permuted input is the same permutation of the output rows.
pub fn project<V: AsRef<[f32]>>(points: &[V], config: &ProjectionConfig) -> Result<Projection> {
    let n = points.len();
    if n < 3 {
        return Err(TsneError::TooFewPoints { needed: 3, found: n });
    }
    if config.iterations == 0 {
        return Err(TsneError::NoIterations);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lexicographic(points[a].as_ref(), points[b].as_ref()));
    let canonical: Vec<&[f32]> = order.iter().map(|&i| points[i].as_ref()).collect();

    let perplexity = config.perplexity_for(n);
    let distances = squared_distances(&canonical)?;
    let cal = perplexity_calibration(&distances, n, perplexity)?;
    let p = joint_affinities(&cal.conditionals, n);
    let p_floored: Vec<f64> = p.p.iter().map(|&v| v.max(P_FLOOR)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = vec![[0.0f64; 2]; n];
    let mut kl_trace = Vec::with_capacity(config.iterations / KL_TRACE_INTERVAL);

    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };

        let (num, sum) = student_t(&y);
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let nij = num[i * n + j];
                let mult = (exaggeration * p_floored[i * n + j] - nij / sum) * nij;
                g[0] += mult * (y[i][0] - y[j][0]);
                g[1] += mult * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }

        for i in 0..n {
            for d in 0..2 {
                gains[i][d] = if (grad[i][d] > 0.0) != (update[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(MIN_GAIN)
                };
                update[i][d] = momentum * update[i][d] - config.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += update[i][d];
            }
        }
        center(&mut y);
        if y.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(TsneError::Diverged { iteration: iter + 1 });
        }

        if (iter + 1) % KL_TRACE_INTERVAL == 0 {
            let (num, sum) = student_t(&y);
            kl_trace.push(kl_divergence(&p, &num, sum));
        }
    }

    let mut coords = vec![[0.0; 2]; n];
    for (canon, &orig) in order.iter().enumerate() {
        coords[orig] = y[canon];
    }
    Ok(Projection {
        coords,
        kl_trace,
        perplexity,
    })
}
