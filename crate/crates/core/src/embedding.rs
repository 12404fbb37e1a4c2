//! Exact t-SNE of class-style codes into the plane.
//!
//! Affinities use per-point Gaussian kernels whose precision is found by
//! bisection on the row entropy (in bits); the low-dimensional kernel is a
//! Student-t with one degree of freedom. The optimizer is plain gradient
//! descent with momentum, per-coordinate gains and early exaggeration. The
//! layout is recentred before the first step and after every step, so a
//! translated initialization follows the same trajectory.
//!
//! Work is split by rows. Every row is accumulated in column order and row
//! sums are reduced in row order, so sequential and parallel execution give
//! bit-identical results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Clamped to `(n - 1) / 3` at fit time.
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub min_gain: f64,
    pub init_std: f64,
    pub seed: u64,
    pub entropy_tolerance: f64,
    pub max_bisection_steps: usize,
    /// Z-score each input dimension before computing affinities.
    pub standardize: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            min_gain: 0.01,
            init_std: 1e-4,
            seed: 0,
            entropy_tolerance: 1e-5,
            max_bisection_steps: 50,
            standardize: false,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity > 0.0) {
            return Err(Error::contract("perplexity must be positive"));
        }
        if self.iterations < 250 {
            return Err(Error::contract("t-SNE needs at least 250 iterations"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::contract("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
}

impl Embedding2D {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Symmetrized joint affinities plus per-row bisection diagnostics.
#[derive(Clone, Debug)]
pub struct Affinities {
    pub n: usize,
    /// Row-major `n x n`, zero diagonal, total mass 1.
    pub p: Vec<f64>,
    /// Entropy in bits of each conditional row at the chosen precision.
    pub row_entropy: Vec<f64>,
    pub row_precision: Vec<f64>,
}

impl Affinities {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }
}

fn squared_distances<P: AsRef<[f64]> + Sync>(points: &[P], exec: Execution) -> Vec<Vec<f64>> {
    exec.map_range(points.len(), |i| {
        let a = points[i].as_ref();
        points
            .iter()
            .map(|b| a.iter().zip(b.as_ref()).map(|(x, y)| (x - y) * (x - y)).sum())
            .collect()
    })
}

/// Conditional distribution of row `i` at precision `beta`; returns entropy in bits.
fn conditional_row(d2: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = d2
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(d2).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (d - dmin)).exp() };
        z += *o;
    }
    let mut weighted = 0.0;
    for (o, &d) in out.iter_mut().zip(d2) {
        *o /= z;
        weighted += *o * (d - dmin);
    }
    // H = ln Z + beta * E[d - dmin], converted to bits.
    (z.ln() + beta * weighted) / std::f64::consts::LN_2
}

fn bisect_row(d2: &[f64], i: usize, target_bits: f64, tol: f64, max_steps: usize) -> (Vec<f64>, f64, f64) {
    let mut row = vec![0.0; d2.len()];
    let mut beta = 1.0;
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut h = conditional_row(d2, i, beta, &mut row);
    for _ in 0..max_steps {
        let gap = h - target_bits;
        if gap.abs() <= tol {
            break;
        }
        if gap > 0.0 {
            lo = beta;
            beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (lo + hi) };
        } else {
            hi = beta;
            beta = 0.5 * (lo + hi);
        }
        h = conditional_row(d2, i, beta, &mut row);
    }
    (row, h, beta)
}

pub fn pairwise_affinities<P: AsRef<[f64]> + Sync>(points: &[P], perplexity: f64) -> Result<Affinities> {
    let cfg = EmbeddingConfig::default();
    affinities_with(
        points,
        perplexity,
        cfg.entropy_tolerance,
        cfg.max_bisection_steps,
        Execution::default(),
    )
}

pub fn affinities_with<P: AsRef<[f64]> + Sync>(
    points: &[P],
    perplexity: f64,
    tol: f64,
    max_steps: usize,
    exec: Execution,
) -> Result<Affinities> {
    let n = points.len();
    if n < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: n });
    }
    if !(perplexity > 0.0) || perplexity >= (n - 1) as f64 {
        return Err(Error::contract(format!(
            "perplexity {perplexity} must lie in (0, {})",
            n - 1
        )));
    }
    let d2 = squared_distances(points, exec);
    if d2.iter().flatten().all(|&d| d == 0.0) {
        return Err(Error::DegenerateAffinity);
    }
    let target = perplexity.log2();
    let rows = exec.map_range(n, |i| bisect_row(&d2[i], i, target, tol, max_steps));
    let mut p = vec![0.0; n * n];
    let norm = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = (rows[i].0[j] + rows[j].0[i]) / norm;
            }
        }
    }
    Ok(Affinities {
        n,
        p,
        row_entropy: rows.iter().map(|r| r.1).collect(),
        row_precision: rows.iter().map(|r| r.2).collect(),
    })
}

fn kernel(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    1.0 / (1.0 + dx * dx + dy * dy)
}

/// Normalizer `Z = sum_{i != j} 1 / (1 + |y_i - y_j|^2)`.
fn kernel_sum(y: &[[f64; 2]], exec: Execution) -> f64 {
    let rows = exec.map_range(y.len(), |i| {
        y.iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, yj)| kernel(&y[i], yj))
            .sum::<f64>()
    });
    rows.iter().sum()
}

/// Gradient of `KL(exaggeration * P || Q)` with respect to each embedded point.
fn gradient_scaled(p: &[f64], y: &[[f64; 2]], exaggeration: f64, exec: Execution) -> Vec<[f64; 2]> {
    let n = y.len();
    let z = kernel_sum(y, exec);
    exec.map_range(n, |i| {
        let mut g = [0.0; 2];
        for j in 0..n {
            if j == i {
                continue;
            }
            let w = kernel(&y[i], &y[j]);
            let coef = 4.0 * (exaggeration * p[i * n + j] - w / z) * w;
            g[0] += coef * (y[i][0] - y[j][0]);
            g[1] += coef * (y[i][1] - y[j][1]);
        }
        g
    })
}

/// Exact analytic gradient of `KL(P || Q)`; `p` is row-major `n x n`.
pub fn kl_gradient(p: &[f64], y: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    check_square(p, y.len())?;
    Ok(gradient_scaled(p, y, 1.0, Execution::Sequential))
}

/// `KL(P || Q) = sum_{p_ij > 0} p_ij ln(p_ij / q_ij)`.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> Result<f64> {
    let n = y.len();
    check_square(p, n)?;
    let z = kernel_sum(y, Execution::Sequential);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                kl += pij * (pij / (kernel(&y[i], &y[j]) / z)).ln();
            }
        }
    }
    Ok(kl)
}

fn check_square(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n * n {
        return Err(Error::contract(format!(
            "affinity matrix has {} entries, expected {n}x{n}",
            p.len()
        )));
    }
    Ok(())
}

/// Result of a t-SNE run with its objective before and after optimization.
#[derive(Clone, Debug)]
pub struct TsneOutput {
    pub embedding: Embedding2D,
    pub perplexity: f64,
    pub kl_initial: f64,
    pub kl_final: f64,
}

pub fn tsne_fit<P: AsRef<[f64]> + Sync>(points: &[P], cfg: &EmbeddingConfig) -> Result<Embedding2D> {
    Ok(fit(points, cfg, Execution::default())?.embedding)
}

/// Seeded Gaussian initialization with standard deviation `cfg.init_std`.
pub fn initial_layout(n: usize, cfg: &EmbeddingConfig) -> Vec<[f64; 2]> {
    let mut r = rng::seeded(cfg.seed);
    (0..n)
        .map(|_| {
            let a = rng::standard_normal(&mut r) * cfg.init_std;
            let b = rng::standard_normal(&mut r) * cfg.init_std;
            [a, b]
        })
        .collect()
}

pub fn fit<P: AsRef<[f64]> + Sync>(points: &[P], cfg: &EmbeddingConfig, exec: Execution) -> Result<TsneOutput> {
    fit_from(points, cfg, initial_layout(points.len(), cfg), exec)
}

/// Run t-SNE from an explicit initial layout.
pub fn fit_from<P: AsRef<[f64]> + Sync>(
    points: &[P],
    cfg: &EmbeddingConfig,
    init: Vec<[f64; 2]>,
    exec: Execution,
) -> Result<TsneOutput> {
    cfg.validate()?;
    let n = points.len();
    if n < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: n });
    }
    if init.len() != n {
        return Err(Error::contract("initial layout length differs from input length"));
    }
    let perplexity = cfg.perplexity.min((n - 1) as f64 / 3.0);
    let aff = if cfg.standardize {
        let z = standardize(points);
        affinities_with(&z, perplexity, cfg.entropy_tolerance, cfg.max_bisection_steps, exec)?
    } else {
        affinities_with(points, perplexity, cfg.entropy_tolerance, cfg.max_bisection_steps, exec)?
    };
    let p = aff.p;

    let mut y = init;
    recenter(&mut y);
    let kl_initial = kl_divergence(&p, &y)?;
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iterations {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < cfg.momentum_switch {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        let grad = gradient_scaled(&p, &y, exaggeration, exec);
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                gains[i][d] = if (g > 0.0) != (update[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    gains[i][d] * 0.8
                }
                .max(cfg.min_gain);
                update[i][d] = momentum * update[i][d] - cfg.learning_rate * gains[i][d] * g;
                y[i][d] += update[i][d];
            }
        }
        recenter(&mut y);
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::contract("t-SNE diverged to non-finite coordinates"));
    }
    let kl_final = kl_divergence(&p, &y)?;
    Ok(TsneOutput {
        embedding: Embedding2D { coords: y },
        perplexity,
        kl_initial,
        kl_final,
    })
}

fn recenter(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let mut mean = [0.0; 2];
    for p in y.iter() {
        mean[0] += p[0];
        mean[1] += p[1];
    }
    mean[0] /= n;
    mean[1] /= n;
    for p in y.iter_mut() {
        p[0] -= mean[0];
        p[1] -= mean[1];
    }
}

/// Per-dimension z-scores; constant dimensions are centred only.
pub fn standardize<P: AsRef<[f64]>>(points: &[P]) -> Vec<Vec<f64>> {
    let n = points.len() as f64;
    let dim = points.first().map_or(0, |p| p.as_ref().len());
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for p in points {
        for ((s, v), m) in var.iter_mut().zip(p.as_ref()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let sd: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
    points
        .iter()
        .map(|p| {
            p.as_ref()
                .iter()
                .zip(&mean)
                .zip(&sd)
                .map(|((v, m), s)| if *s > 0.0 { (v - m) / s } else { v - m })
                .collect()
        })
        .collect()
}
