//! Loss primitives shared by every training regime.

use serde::{Deserialize, Serialize};

use super::ops::{check_finite, softmax_row};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logarithms.
pub const LOG_EPS: f32 = 1e-8;
/// Smallest row norm accepted by the cosine loss.
pub const NORM_FLOOR: f32 = 1e-8;
const ROW_SUM_TOL: f32 = 1e-5;

/// Coefficients of the linear loss combination used for distillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpec {
    pub w_task: f32,
    pub w_distil_ce: f32,
    pub w_cosine: f32,
    pub w_mse: f32,
    pub w_kl: f32,
    pub temperature: f32,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            w_task: 1.0,
            w_distil_ce: 0.5,
            w_cosine: 0.0,
            w_mse: 0.0,
            w_kl: 0.0,
            temperature: 1.0,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("w_task", self.w_task),
            ("w_distil_ce", self.w_distil_ce),
            ("w_cosine", self.w_cosine),
            ("w_mse", self.w_mse),
            ("w_kl", self.w_kl),
        ];
        for (name, w) in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Target of a cross-entropy term.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Class indices, one per row.
    Hard(&'a [usize]),
    /// Probability rows with the logits' shape.
    Soft(&'a Tensor),
}

fn batch_classes(op: &str, logits: &Tensor) -> Result<(usize, usize)> {
    match logits.shape() {
        [b, c] => Ok((*b, *c)),
        s => Err(Error::invalid(format!("{op}: expected [batch, classes], got {s:?}"))),
    }
}

fn check_prob_rows(op: &str, p: &Tensor, classes: usize) -> Result<()> {
    for (i, row) in p.data().chunks(classes).enumerate() {
        let s: f32 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|v| *v < 0.0) {
            return Err(Error::invalid(format!(
                "{op}: row {i} is not a probability distribution (sum {s})"
            )));
        }
    }
    Ok(())
}

/// Mean over the batch of `-Σ target · log softmax(logits / T)`.
///
/// Hard labels are expanded to one-hot rows and take the soft path, so the
/// two forms agree bitwise.
pub fn cross_entropy(logits: &Tensor, target: Target<'_>, temperature: f32) -> Result<Tensor> {
    let (b, c) = batch_classes("cross_entropy", logits)?;
    match target {
        Target::Hard(labels) => {
            if labels.len() != b {
                return Err(Error::invalid(format!(
                    "cross_entropy: {} labels for batch of {b}",
                    labels.len()
                )));
            }
            let mut onehot = vec![0.0; b * c];
            for (i, &y) in labels.iter().enumerate() {
                if y >= c {
                    return Err(Error::invalid(format!(
                        "cross_entropy: label {y} out of range for {c} classes"
                    )));
                }
                onehot[i * c + y] = 1.0;
            }
            let t = Tensor::new(onehot, &[b, c])?;
            soft_cross_entropy(logits, &t, temperature, b, c)
        }
        Target::Soft(t) => {
            if t.shape() != logits.shape() {
                return Err(Error::invalid(format!(
                    "cross_entropy: target {:?} vs logits {:?}",
                    t.shape(),
                    logits.shape()
                )));
            }
            check_prob_rows("cross_entropy", t, c)?;
            soft_cross_entropy(logits, t, temperature, b, c)
        }
    }
}

fn soft_cross_entropy(logits: &Tensor, target: &Tensor, temperature: f32, b: usize, c: usize) -> Result<Tensor> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "cross_entropy: temperature must be positive, got {temperature}"
        )));
    }
    check_finite("cross_entropy", logits)?;
    let inv_t = 1.0 / temperature;
    // log-softmax rows, kept for the backward pass
    let mut logp = vec![0.0; b * c];
    for (row, dst) in logits.data().chunks(c).zip(logp.chunks_mut(c)) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let lse = row.iter().map(|v| ((v - max) * inv_t).exp()).sum::<f32>().ln();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max) * inv_t - lse;
        }
    }
    let mut total = 0.0;
    for (lr, tr) in logp.chunks(c).zip(target.data().chunks(c)) {
        total -= lr.iter().zip(tr).map(|(l, t)| l * t).sum::<f32>();
    }
    let loss = total / b as f32;

    let (lr, tc) = (logits.requires_grad(), target.clone());
    Ok(Tensor::from_op(
        vec![loss],
        vec![1],
        "cross_entropy",
        &[logits, target],
        Box::new(move |g, _| {
            let scale = g[0] / b as f32;
            let gl = lr.then(|| {
                let mut gl = vec![0.0; b * c];
                for ((dst, lrow), trow) in gl.chunks_mut(c).zip(logp.chunks(c)).zip(tc.data().chunks(c)) {
                    let tsum: f32 = trow.iter().sum();
                    for ((d, l), t) in dst.iter_mut().zip(lrow).zip(trow) {
                        *d = scale * inv_t * (tsum * l.exp() - t);
                    }
                }
                gl
            });
            let gt = tc
                .requires_grad()
                .then(|| logp.iter().map(|l| -scale * l).collect());
            vec![gl, gt]
        }),
    ))
}

/// Mean over the batch of `Σ p · (log p − log q)` with both sides clamped at [`LOG_EPS`].
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> Result<Tensor> {
    if p.shape() != q.shape() {
        return Err(Error::invalid(format!(
            "kl_divergence: shape mismatch {:?} vs {:?}",
            p.shape(),
            q.shape()
        )));
    }
    let (b, c) = batch_classes("kl_divergence", p)?;
    check_prob_rows("kl_divergence", p, c)?;
    check_prob_rows("kl_divergence", q, c)?;
    let lp: Vec<f32> = p.data().iter().map(|v| v.max(LOG_EPS).ln()).collect();
    let lq: Vec<f32> = q.data().iter().map(|v| v.max(LOG_EPS).ln()).collect();
    let total: f32 = p
        .data()
        .iter()
        .zip(lp.iter().zip(&lq))
        .map(|(pv, (a, b))| pv * (a - b))
        .sum();
    let (pc, qc) = (p.clone(), q.clone());
    Ok(Tensor::from_op(
        vec![total / b as f32],
        vec![1],
        "kl_divergence",
        &[p, q],
        Box::new(move |g, _| {
            let scale = g[0] / b as f32;
            let gp = pc.requires_grad().then(|| {
                pc.data()
                    .iter()
                    .zip(lp.iter().zip(&lq))
                    .map(|(pv, (a, b))| {
                        let d_self = if *pv > LOG_EPS { 1.0 } else { 0.0 };
                        scale * (a - b + d_self)
                    })
                    .collect()
            });
            let gq = qc.requires_grad().then(|| {
                pc.data()
                    .iter()
                    .zip(qc.data())
                    .map(|(pv, qv)| if *qv > LOG_EPS { -scale * pv / qv } else { 0.0 })
                    .collect()
            });
            vec![gp, gq]
        }),
    ))
}

/// Mean over rows of `1 − cos(a_i, b_i)`.
pub fn cosine_distance_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "cosine_distance_loss: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (rows, d) = batch_classes("cosine_distance_loss", a)?;
    let mut cos = vec![0.0; rows];
    let mut na = vec![0.0; rows];
    let mut nb = vec![0.0; rows];
    for r in 0..rows {
        let ar = &a.data()[r * d..(r + 1) * d];
        let br = &b.data()[r * d..(r + 1) * d];
        na[r] = ar.iter().map(|v| v * v).sum::<f32>().sqrt();
        nb[r] = br.iter().map(|v| v * v).sum::<f32>().sqrt();
        if !(na[r] >= NORM_FLOOR && nb[r] >= NORM_FLOOR) {
            return Err(Error::NumericInput(format!(
                "cosine_distance_loss: row {r} has (near-)zero or non-finite norm"
            )));
        }
        let dot: f32 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        cos[r] = dot / (na[r] * nb[r]);
    }
    let loss = cos.iter().map(|c| 1.0 - c).sum::<f32>() / rows as f32;
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        vec![loss],
        vec![1],
        "cosine_distance_loss",
        &[a, b],
        Box::new(move |g, _| {
            let scale = -g[0] / rows as f32;
            // d cos / d x = y / (|x||y|) − cos · x / |x|²
            let side = |x: &Tensor, y: &Tensor, nx: &[f32], ny: &[f32]| {
                let mut gx = vec![0.0; rows * d];
                for r in 0..rows {
                    for j in 0..d {
                        let xv = x.data()[r * d + j];
                        let yv = y.data()[r * d + j];
                        gx[r * d + j] =
                            scale * (yv / (nx[r] * ny[r]) - cos[r] * xv / (nx[r] * nx[r]));
                    }
                }
                gx
            };
            vec![
                ac.requires_grad().then(|| side(&ac, &bc, &na, &nb)),
                bc.requires_grad().then(|| side(&bc, &ac, &nb, &na)),
            ]
        }),
    ))
}

/// Mean of squared elementwise differences.
pub fn mse_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "mse_loss: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.numel() as f32;
    let diff: Vec<f32> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f32>() / n;
    let (ra, rb) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(
        vec![loss],
        vec![1],
        "mse_loss",
        &[a, b],
        Box::new(move |g, _| {
            let k = 2.0 * g[0] / n;
            vec![
                ra.then(|| diff.iter().map(|d| k * d).collect()),
                rb.then(|| diff.iter().map(|d| -k * d).collect()),
            ]
        }),
    ))
}

/// Probability rows of `logits / T` as plain values (no graph).
pub fn probabilities(logits: &Tensor, temperature: f32) -> Result<Vec<f32>> {
    let (_, c) = batch_classes("probabilities", logits)?;
    let mut out = vec![0.0; logits.numel()];
    for (row, dst) in logits.data().chunks(c).zip(out.chunks_mut(c)) {
        softmax_row(row, 1.0 / temperature, dst);
    }
    Ok(out)
}
