use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Pca,
    Tsne,
}

/// Settings of the exact t-SNE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: 200.0,
        }
    }
}

/// Row-major `[n, dim]` points.
fn check_points(points: &[f32], dim: usize) -> Result<usize> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::invalid(format!("{} values do not form rows of {dim}", points.len())));
    }
    let n = points.len() / dim;
    if n < 3 {
        return Err(Error::invalid(format!("projection needs at least 3 points, got {n}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInput("non-finite embedding value".into()));
    }
    Ok(n)
}

/// Projects `[n, dim]` embeddings to two dimensions.
pub fn project_embeddings(points: &[f32], dim: usize, method: Projection, seed: u64) -> Result<Vec<[f64; 2]>> {
    match method {
        Projection::Pca => pca(points, dim),
        Projection::Tsne => tsne(points, dim, &TsneConfig::default(), seed),
    }
}

/// Coordinates on the top two principal components of the mean-centred
/// points. Components come from power iteration with deflation on the
/// covariance matrix; each is signed so its largest entry is positive.
pub fn pca(points: &[f32], dim: usize) -> Result<Vec<[f64; 2]>> {
    let n = check_points(points, dim)?;
    let mut mean = vec![0.0f64; dim];
    for row in points.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += *v as f64 / n as f64;
        }
    }
    let centred: Vec<Vec<f64>> = points
        .chunks(dim)
        .map(|r| r.iter().zip(&mean).map(|(v, m)| *v as f64 - m).collect())
        .collect();
    let mut cov = vec![0.0f64; dim * dim];
    for r in &centred {
        for i in 0..dim {
            for j in i..dim {
                cov[i * dim + j] += r[i] * r[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            cov[i * dim + j] = cov[j * dim + i];
        }
    }
    let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
    let mut components: Vec<Vec<f64>> = Vec::new();
    for k in 0..2 {
        let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + (i * 7 + k * 3) as f64 % 5.0 / 10.0).collect();
        orthonormalize(&mut v, &components);
        for _ in 0..1000 {
            let mut w = vec![0.0; dim];
            for i in 0..dim {
                w[i] = (0..dim).map(|j| cov[i * dim + j] * v[j]).sum();
            }
            let norm = orthonormalize(&mut w, &components);
            if norm <= 1e-12 * trace {
                break;
            }
            let next = w;
            let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            if delta < 1e-13 {
                break;
            }
        }
        let largest = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if largest < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
    }
    Ok(centred
        .iter()
        .map(|r| {
            let dot = |c: &Vec<f64>| r.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [dot(&components[0]), dot(&components[1])]
        })
        .collect())
}

/// Removes the `basis` components from `v` and rescales it to unit length.
/// Returns the norm before rescaling; `v` is left as is when that is zero.
fn orthonormalize(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for c in basis {
        let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
        for (vi, ci) in v.iter_mut().zip(c) {
            *vi -= d * ci;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn squared_distances(points: &[f32], dim: usize, n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = points[i * dim..(i + 1) * dim]
                .iter()
                .zip(&points[j * dim..(j + 1) * dim])
                .map(|(a, b)| ((*a - *b) as f64).powi(2))
                .sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Conditional probabilities of row `i` at precision `beta`, plus the entropy.
fn row_affinities(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let n = out.len();
    let min = (0..n).filter(|&j| j != i).map(|j| dist[j]).fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for j in 0..n {
        out[j] = if j == i { 0.0 } else { (-(dist[j] - min) * beta).exp() };
        sum += out[j];
    }
    let mut h = 0.0;
    for j in 0..n {
        out[j] /= sum;
        if out[j] > 0.0 {
            h -= out[j] * out[j].ln();
        }
    }
    h
}

/// Exact t-SNE with per-point bisection on the Gaussian precision, early
/// exaggeration, momentum 0.5 then 0.8, and adaptive gains.
pub fn tsne(points: &[f32], dim: usize, cfg: &TsneConfig, seed: u64) -> Result<Vec<[f64; 2]>> {
    let n = check_points(points, dim)?;
    if !(cfg.perplexity > 0.0) || cfg.perplexity >= (n - 1) as f64 / 3.0 {
        return Err(Error::invalid(format!(
            "perplexity {} is infeasible for {n} points (must be below {})",
            cfg.perplexity,
            (n - 1) as f64 / 3.0
        )));
    }
    let dist = squared_distances(points, dim, n);
    let target = cfg.perplexity.ln();
    let mut p = vec![0.0f64; n * n];
    let mut row = vec![0.0f64; n];
    for i in 0..n {
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        for _ in 0..200 {
            let h = row_affinities(&dist[i * n..(i + 1) * n], i, beta, &mut row);
            if (h - target).abs() < 1e-6 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    let mut sym = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut q = vec![0.0f64; n * n];
    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iterations { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iterations { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                    q[i * n + j] = 1.0 / (1.0 + d);
                    z += q[i * n + j];
                }
            }
        }
        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = q[i * n + j];
                let f = (exaggeration * sym[i * n + j] - w / z) * w;
                grad[0] += 4.0 * f * (y[i][0] - y[j][0]);
                grad[1] += 4.0 * f * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                gains[i][k] = if (grad[k] > 0.0) != (velocity[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                velocity[i][k] = momentum * velocity[i][k] - cfg.learning_rate * gains[i][k] * grad[k];
            }
        }
        for i in 0..n {
            y[i][0] += velocity[i][0];
            y[i][1] += velocity[i][1];
        }
        let mean = [
            y.iter().map(|v| v[0]).sum::<f64>() / n as f64,
            y.iter().map(|v| v[1]).sum::<f64>() / n as f64,
        ];
        for v in &mut y {
            v[0] -= mean[0];
            v[1] -= mean[1];
        }
    }
    Ok(y)
}
