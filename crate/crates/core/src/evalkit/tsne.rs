use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{SeededRng, Tensor};

/// Largest point count accepted by the exact O(N²) method.
pub const TSNE_MAX_POINTS: usize = 2000;
const DIST_FLOOR: f64 = 1e-12;
const P_FLOOR: f64 = 1e-12;
const PERPLEXITY_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations with exaggeration and the lower momentum.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
        }
    }
}

pub struct TsneOutput {
    /// `N×2` coordinates.
    pub embedding: Tensor,
    /// KL(P‖Q) before the first update, then after every iteration.
    pub kl_history: Vec<f64>,
}

fn sq_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, r) in row.iter_mut().enumerate() {
            if i != j {
                let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                *r = s.max(DIST_FLOOR);
            }
        }
    });
    d
}

/// Conditional distribution `P(·|i)` at precision `beta` and its perplexity.
fn conditional(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(dist).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (d - dmin)).exp() };
        sum += *o;
    }
    let mut entropy = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            entropy -= *o * o.ln();
        }
    }
    entropy.exp()
}

/// Row-conditional affinities with per-point precision found by bisection on
/// the perplexity. Returns the `N×N` row-stochastic matrix (row-major).
pub fn conditional_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    let n = x.len();
    if !(perplexity > 0.0 && perplexity.is_finite()) {
        return Err(Error::InvalidArgument(format!("perplexity must be > 0, got {perplexity}")));
    }
    if (n as f64) < 3.0 * perplexity {
        return Err(Error::InvalidArgument(format!(
            "perplexity {perplexity} needs at least {} points, got {n}",
            (3.0 * perplexity).ceil()
        )));
    }
    let dist = sq_distances(x);
    let mut p = vec![0.0; n * n];
    p.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let di = &dist[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        for _ in 0..200 {
            let perp = conditional(di, i, beta, row);
            if (perp - perplexity).abs() < PERPLEXITY_TOL {
                break;
            }
            // Higher precision narrows the distribution and lowers perplexity.
            if perp > perplexity {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    });
    Ok(p)
}

/// Symmetrized joint affinities `(P_{j|i} + P_{i|j}) / 2N`.
pub fn joint_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    let n = x.len();
    let c = conditional_affinities(x, perplexity)?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (c[i * n + j] + c[j * n + i]) / (2.0 * n as f64);
        }
    }
    Ok(p)
}

/// Student-t kernel matrix (zero diagonal) and its sum.
fn student_t(y: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut num = vec![0.0; n * n];
    num.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, r) in row.iter_mut().enumerate() {
            if i != j {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                *r = 1.0 / (1.0 + dx * dx + dy * dy);
            }
        }
    });
    let sum = num.iter().sum();
    (num, sum)
}

fn kl(p: &[f64], num: &[f64], sum: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij.max(P_FLOOR) / (nij / sum).max(P_FLOOR)).ln())
        .sum()
}

/// Exact t-SNE to two dimensions.
pub fn tsne(x: &[Vec<f64>], cfg: &TsneConfig, seed: u64) -> Result<TsneOutput> {
    let n = x.len();
    if n > TSNE_MAX_POINTS {
        return Err(Error::InvalidArgument(format!(
            "exact t-SNE is limited to {TSNE_MAX_POINTS} points, got {n}"
        )));
    }
    if let Some(w) = x.first().map(Vec::len) {
        if x.iter().any(|r| r.len() != w || r.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("t-SNE input rows must be finite and equally long".into()));
        }
    }
    let p = joint_affinities(x, cfg.perplexity)?;
    let mut rng = SeededRng::new(seed).derive_str("tsne");
    let mut y: Vec<f64> = (0..2 * n).map(|_| 1e-4 * rng.normal()).collect();
    let mut velocity = vec![0.0f64; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let (num, sum) = student_t(&y, n);
    let mut history = vec![kl(&p, &num, sum)];

    for it in 0..cfg.iterations {
        let early = it < cfg.exaggeration_iters;
        let exag = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early { cfg.initial_momentum } else { cfg.final_momentum };
        let (num, sum) = student_t(&y, n);
        let mut grad = vec![0.0; 2 * n];
        grad.par_chunks_mut(2).enumerate().for_each(|(i, g)| {
            for j in 0..n {
                let w = (exag * p[i * n + j] - num[i * n + j] / sum) * num[i * n + j];
                g[0] += 4.0 * w * (y[2 * i] - y[2 * j]);
                g[1] += 4.0 * w * (y[2 * i + 1] - y[2 * j + 1]);
            }
        });
        for k in 0..2 * n {
            gains[k] = if grad[k].signum() != velocity[k].signum() {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            velocity[k] = momentum * velocity[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + c] -= mean);
        }
        let (num, sum) = student_t(&y, n);
        history.push(kl(&p, &num, sum));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-SNE coordinates".into()));
    }
    Ok(TsneOutput {
        embedding: Tensor::matrix(n.max(1), 2, if n == 0 { vec![0.0; 2] } else { y })?,
        kl_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|i| (0..dim).map(|_| rng.normal() + if i % 2 == 0 { 3.0 } else { 0.0 }).collect())
            .collect()
    }

    #[test]
    fn joint_affinities_are_a_symmetric_distribution() {
        let x = cloud(40, 5, 1);
        let p = joint_affinities(&x, 8.0).unwrap();
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for i in 0..40 {
            for j in 0..40 {
                assert!(p[i * 40 + j] >= 0.0);
                assert_eq!(p[i * 40 + j], p[j * 40 + i]);
            }
        }
    }

    #[test]
    fn conditional_rows_hit_target_perplexity() {
        let x = cloud(60, 4, 2);
        let c = conditional_affinities(&x, 10.0).unwrap();
        for row in c.chunks(60) {
            let h: f64 = row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
            assert!((h.exp() - 10.0).abs() < 1e-3, "{}", h.exp());
        }
    }

    #[test]
    fn infeasible_perplexity_is_an_error() {
        assert!(conditional_affinities(&cloud(20, 2, 3), 10.0).is_err());
        let dup = vec![vec![1.0, 1.0]; 12];
        assert!(conditional_affinities(&dup, 3.0).is_ok());
    }

    #[test]
    fn kl_decreases_and_runs_are_reproducible() {
        let cfg = TsneConfig {
            perplexity: 5.0,
            ..TsneConfig::default()
        };
        for seed in 0..50u64 {
            let x = cloud(20 + (seed as usize % 5) * 10, 2 + seed as usize % 7, 100 + seed);
            let out = tsne(&x, &cfg, seed).unwrap();
            assert_eq!(out.kl_history.len(), cfg.iterations + 1);
            assert!(out.kl_history.last().unwrap() < &out.kl_history[0], "seed {seed}");
        }
        let x = cloud(30, 6, 4);
        let a = tsne(&x, &cfg, 7).unwrap();
        assert_eq!(a.embedding.shape(), &[30, 2]);
        assert_eq!(a.embedding, tsne(&x, &cfg, 7).unwrap().embedding);
    }
}
