//! Differentiable tensor operations.
//!
//! Every op validates shapes up front and records a backward closure only
//! when one of its inputs requires a gradient.

use rand::Rng;

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Strided view of a row-major matrix for the gemm wrapper.
#[derive(Clone, Copy)]
struct MatView {
    rs: isize,
    cs: isize,
}

impl MatView {
    fn row_major(cols: usize) -> Self {
        MatView { rs: cols as isize, cs: 1 }
    }
    fn col_major(rows: usize) -> Self {
        MatView { rs: 1, cs: rows as isize }
    }
    fn t(self) -> Self {
        MatView { rs: self.cs, cs: self.rs }
    }
}

/// c (m×n) = a (m×k) · b (k×n) [+ c when `accumulate`].
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    av: MatView,
    b: &[f32],
    bv: MatView,
    c: &mut [f32],
    cv: MatView,
    accumulate: bool,
) {
    let extent = |rows: usize, cols: usize, v: MatView| {
        if rows == 0 || cols == 0 {
            0
        } else {
            ((rows - 1) as isize * v.rs + (cols - 1) as isize * v.cs) as usize + 1
        }
    };
    assert!(extent(m, k, av) <= a.len(), "gemm: lhs out of bounds");
    assert!(extent(k, n, bv) <= b.len(), "gemm: rhs out of bounds");
    assert!(extent(m, n, cv) <= c.len(), "gemm: out of bounds");
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: all three extents were bounds-checked above and strides are positive.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            av.rs,
            av.cs,
            b.as_ptr(),
            bv.rs,
            bv.cs,
            beta,
            c.as_mut_ptr(),
            cv.rs,
            cv.cs,
        );
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    let (ra, rb) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        "add",
        &[a, b],
        Box::new(move |g, _| vec![ra.then(|| g.to_vec()), rb.then(|| g.to_vec())]),
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let (ra, rb) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        "sub",
        &[a, b],
        Box::new(move |g, _| {
            vec![
                ra.then(|| g.to_vec()),
                rb.then(|| g.iter().map(|v| -v).collect()),
            ]
        }),
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        "mul",
        &[a, b],
        Box::new(move |g, _| {
            let ga = ac
                .requires_grad()
                .then(|| g.iter().zip(bc.data()).map(|(g, y)| g * y).collect());
            let gb = bc
                .requires_grad()
                .then(|| g.iter().zip(ac.data()).map(|(g, x)| g * x).collect());
            vec![ga, gb]
        }),
    ))
}

pub fn scale(a: &Tensor, c: f32) -> Tensor {
    let data = a.data().iter().map(|x| x * c).collect();
    Tensor::from_op(
        data,
        a.shape().to_vec(),
        "scale",
        &[a],
        Box::new(move |g, _| vec![Some(g.iter().map(|v| v * c).collect())]),
    )
}

/// `a + b` where `b`'s shape is a trailing suffix of `a`'s (bias, positional table).
pub fn add_broadcast(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
        return Err(Error::invalid(format!(
            "add_broadcast: {sb:?} is not a suffix of {sa:?}"
        )));
    }
    let inner = b.numel();
    let mut data = a.data().to_vec();
    for chunk in data.chunks_mut(inner) {
        chunk.iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
    }
    let (ra, rb) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(
        data,
        sa.to_vec(),
        "add_broadcast",
        &[a, b],
        Box::new(move |g, _| {
            let gb = rb.then(|| {
                let mut acc = vec![0.0; inner];
                for chunk in g.chunks(inner) {
                    acc.iter_mut().zip(chunk).for_each(|(a, v)| *a += v);
                }
                acc
            });
            vec![ra.then(|| g.to_vec()), gb]
        }),
    ))
}

pub fn sum(a: &Tensor) -> Tensor {
    let total: f32 = a.data().iter().sum();
    let n = a.numel();
    Tensor::from_op(
        vec![total],
        vec![1],
        "sum",
        &[a],
        Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
    )
}

pub fn mean(a: &Tensor) -> Tensor {
    let n = a.numel();
    let total: f32 = a.data().iter().sum();
    Tensor::from_op(
        vec![total / n as f32],
        vec![1],
        "mean",
        &[a],
        Box::new(move |g, _| vec![Some(vec![g[0] / n as f32; n])]),
    )
}

pub fn reshape(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if numel(shape) != a.numel() || shape.contains(&0) {
        return Err(Error::invalid(format!(
            "reshape: cannot view {:?} as {shape:?}",
            a.shape()
        )));
    }
    Ok(Tensor::from_op(
        a.data().to_vec(),
        shape.to_vec(),
        "reshape",
        &[a],
        Box::new(|g, _| vec![Some(g.to_vec())]),
    ))
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data(data: &[f32], shape: &[usize], perm: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; shape.len()];
    let last = shape.len() - 1;
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        // odometer increment over the output index
        let mut d = last;
        loop {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
            if d == 0 {
                break;
            }
            d -= 1;
        }
    }
    (out, out_shape)
}

/// Reorders axes; `perm[i]` names the input axis that becomes output axis `i`.
pub fn permute(a: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rank = a.shape().len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::invalid(format!(
            "permute: {perm:?} is not a permutation of {rank} axes"
        )));
    }
    let (data, out_shape) = permute_data(a.data(), a.shape(), perm);
    let mut inverse = vec![0; rank];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    let out_shape_c = out_shape.clone();
    Ok(Tensor::from_op(
        data,
        out_shape,
        "permute",
        &[a],
        Box::new(move |g, _| vec![Some(permute_data(g, &out_shape_c, &inverse).0)]),
    ))
}

/// `x[.., k] · w[k, n] (+ b[n])`, the workhorse of every dense layer.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let xs = x.shape();
    let ws = w.shape();
    if ws.len() != 2 || xs[xs.len() - 1] != ws[0] {
        return Err(Error::invalid(format!(
            "linear: input {xs:?} incompatible with weight {ws:?}"
        )));
    }
    let (k, n) = (ws[0], ws[1]);
    if let Some(b) = b {
        if b.shape() != [n] {
            return Err(Error::invalid(format!(
                "linear: bias {:?} does not match {n} outputs",
                b.shape()
            )));
        }
    }
    let rows = x.numel() / k;
    let mut out = vec![0.0; rows * n];
    if let Some(b) = b {
        for row in out.chunks_mut(n) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(
        rows,
        k,
        n,
        x.data(),
        MatView::row_major(k),
        w.data(),
        MatView::row_major(n),
        &mut out,
        MatView::row_major(n),
        b.is_some(),
    );
    let mut out_shape = xs.to_vec();
    *out_shape.last_mut().unwrap() = n;

    let (xc, wc) = (x.clone(), w.clone());
    let rb = b.is_some_and(|b| b.requires_grad());
    let mut parents = vec![x, w];
    if let Some(b) = b {
        parents.push(b);
    }
    let has_bias = b.is_some();
    Ok(Tensor::from_op(
        out,
        out_shape,
        "linear",
        &parents,
        Box::new(move |g, _| {
            let gx = xc.requires_grad().then(|| {
                let mut gx = vec![0.0; rows * k];
                gemm(
                    rows,
                    n,
                    k,
                    g,
                    MatView::row_major(n),
                    wc.data(),
                    MatView::row_major(n).t(),
                    &mut gx,
                    MatView::row_major(k),
                    false,
                );
                gx
            });
            let gw = wc.requires_grad().then(|| {
                let mut gw = vec![0.0; k * n];
                gemm(
                    k,
                    rows,
                    n,
                    xc.data(),
                    MatView::row_major(k).t(),
                    g,
                    MatView::row_major(n),
                    &mut gw,
                    MatView::row_major(n),
                    false,
                );
                gw
            });
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(rb.then(|| {
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    gb
                }));
            }
            grads
        }),
    ))
}

/// Batched product over the leading axis: `op(a)[b, m, k] · op(b)[b, k, n]`,
/// where `op` transposes the last two axes when the matching flag is set.
pub fn batched_matmul(a: &Tensor, b: &Tensor, trans_a: bool, trans_b: bool) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
        return Err(Error::invalid(format!(
            "batched_matmul: need [b, _, _] operands with equal batch, got {sa:?} and {sb:?}"
        )));
    }
    let batch = sa[0];
    let (m, k) = if trans_a { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
    let (k2, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
    if k != k2 {
        return Err(Error::invalid(format!(
            "batched_matmul: inner dims differ ({k} vs {k2})"
        )));
    }
    let av = if trans_a { MatView::col_major(m) } else { MatView::row_major(k) };
    let bv = if trans_b { MatView::col_major(k) } else { MatView::row_major(n) };
    let cv = MatView::row_major(n);
    let (asz, bsz, csz) = (m * k, k * n, m * n);
    let mut out = vec![0.0; batch * csz];
    for i in 0..batch {
        gemm(
            m,
            k,
            n,
            &a.data()[i * asz..(i + 1) * asz],
            av,
            &b.data()[i * bsz..(i + 1) * bsz],
            bv,
            &mut out[i * csz..(i + 1) * csz],
            cv,
            false,
        );
    }
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        out,
        vec![batch, m, n],
        "batched_matmul",
        &[a, b],
        Box::new(move |g, _| {
            let ga = ac.requires_grad().then(|| {
                let mut ga = vec![0.0; batch * asz];
                for i in 0..batch {
                    // dA = dC · Bᵀ, written back in A's storage layout
                    gemm(
                        m,
                        n,
                        k,
                        &g[i * csz..(i + 1) * csz],
                        cv,
                        &bc.data()[i * bsz..(i + 1) * bsz],
                        bv.t(),
                        &mut ga[i * asz..(i + 1) * asz],
                        av,
                        false,
                    );
                }
                ga
            });
            let gb = bc.requires_grad().then(|| {
                let mut gb = vec![0.0; batch * bsz];
                for i in 0..batch {
                    // dB = Aᵀ · dC
                    gemm(
                        k,
                        m,
                        n,
                        &ac.data()[i * asz..(i + 1) * asz],
                        av.t(),
                        &g[i * csz..(i + 1) * csz],
                        cv,
                        &mut gb[i * bsz..(i + 1) * bsz],
                        bv,
                        false,
                    );
                }
                gb
            });
            vec![ga, gb]
        }),
    ))
}

pub(crate) fn check_finite(op: &str, t: &Tensor) -> Result<()> {
    if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericInput(format!(
            "{op}: non-finite value {} at flat index {i}",
            t.data()[i]
        )));
    }
    Ok(())
}

/// Row-wise softmax of `x / temperature` over the last axis.
pub fn softmax(x: &Tensor, temperature: f32) -> Result<Tensor> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "softmax: temperature must be positive, got {temperature}"
        )));
    }
    check_finite("softmax", x)?;
    let c = *x.shape().last().unwrap();
    let inv_t = 1.0 / temperature;
    let mut out = vec![0.0; x.numel()];
    for (row, dst) in x.data().chunks(c).zip(out.chunks_mut(c)) {
        softmax_row(row, inv_t, dst);
    }
    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        "softmax",
        &[x],
        Box::new(move |g, y| {
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), dst) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((d, gv), yv) in dst.iter_mut().zip(gr).zip(yr) {
                    *d = yv * (gv - dot) * inv_t;
                }
            }
            vec![Some(gx)]
        }),
    ))
}

pub(crate) fn softmax_row(row: &[f32], inv_t: f32, dst: &mut [f32]) {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for (d, &v) in dst.iter_mut().zip(row) {
        *d = ((v - max) * inv_t).exp();
        total += *d;
    }
    let inv = 1.0 / total;
    dst.iter_mut().for_each(|d| *d *= inv);
}

/// Layer normalization over the last axis with affine parameters.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let d = *x.shape().last().unwrap();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::invalid(format!(
            "layer_norm: affine params {:?}/{:?} do not match width {d}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let rows = x.numel() / d;
    let mut xhat = vec![0.0; x.numel()];
    let mut rstd = vec![0.0; rows];
    let mut out = vec![0.0; x.numel()];
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mu = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f32>() / d as f32;
        let rs = 1.0 / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mu) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    let (xr, gc, br) = (x.requires_grad(), gamma.clone(), beta.requires_grad());
    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        "layer_norm",
        &[x, gamma, beta],
        Box::new(move |g, _| {
            let gx = xr.then(|| {
                let mut gx = vec![0.0; g.len()];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    for j in 0..d {
                        dxhat[j] = gr[j] * gc.data()[j];
                    }
                    let m1 = dxhat.iter().sum::<f32>() / d as f32;
                    let m2 = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f32>() / d as f32;
                    for j in 0..d {
                        gx[r * d + j] = rstd[r] * (dxhat[j] - m1 - hr[j] * m2);
                    }
                }
                gx
            });
            let gg = gc.requires_grad().then(|| {
                let mut gg = vec![0.0; d];
                for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        gg[j] += gr[j] * hr[j];
                    }
                }
                gg
            });
            let gb = br.then(|| {
                let mut gb = vec![0.0; d];
                for gr in g.chunks(d) {
                    gb.iter_mut().zip(gr).for_each(|(a, v)| *a += v);
                }
                gb
            });
            vec![gx, gg, gb]
        }),
    ))
}

const INV_SQRT2: f32 = std::f32::consts::FRAC_1_SQRT_2;

/// Exact (erf-based) GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| 0.5 * v * (1.0 + libm::erff(v * INV_SQRT2)))
        .collect();
    let xc = x.clone();
    Tensor::from_op(
        data,
        x.shape().to_vec(),
        "gelu",
        &[x],
        Box::new(move |g, _| {
            let inv_sqrt_2pi = 0.5 * std::f32::consts::FRAC_2_SQRT_PI * INV_SQRT2;
            let gx = g
                .iter()
                .zip(xc.data())
                .map(|(&gv, &v)| {
                    let cdf = 0.5 * (1.0 + libm::erff(v * INV_SQRT2));
                    let pdf = inv_sqrt_2pi * (-0.5 * v * v).exp();
                    gv * (cdf + v * pdf)
                })
                .collect();
            vec![Some(gx)]
        }),
    )
}

/// Inverted dropout; `p == 0` is the identity and consumes no randomness.
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, p: f32, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout: p must be in [0, 1), got {p}")));
    }
    if p == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f32> = (0..x.numel())
        .map(|_| if rng.random::<f32>() < p { 0.0 } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok(Tensor::from_op(
        data,
        x.shape().to_vec(),
        "dropout",
        &[x],
        Box::new(move |g, _| vec![Some(g.iter().zip(&mask).map(|(g, m)| g * m).collect())]),
    ))
}

/// Prepends a shared token row to every sequence: `[b, p, d] → [b, p + 1, d]`.
pub fn prepend_token(x: &Tensor, token: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || token.shape() != [s[2]] {
        return Err(Error::invalid(format!(
            "prepend_token: sequence {s:?} and token {:?} are incompatible",
            token.shape()
        )));
    }
    let (b, p, d) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(b * (p + 1) * d);
    for seq in x.data().chunks(p * d) {
        out.extend_from_slice(token.data());
        out.extend_from_slice(seq);
    }
    let (rx, rt) = (x.requires_grad(), token.requires_grad());
    Ok(Tensor::from_op(
        out,
        vec![b, p + 1, d],
        "prepend_token",
        &[x, token],
        Box::new(move |g, _| {
            let gx = rx.then(|| {
                g.chunks((p + 1) * d)
                    .flat_map(|seq| seq[d..].iter().copied())
                    .collect()
            });
            let gt = rt.then(|| {
                let mut acc = vec![0.0; d];
                for seq in g.chunks((p + 1) * d) {
                    acc.iter_mut().zip(&seq[..d]).for_each(|(a, v)| *a += v);
                }
                acc
            });
            vec![gx, gt]
        }),
    ))
}

/// Picks one token position from every sequence: `[b, t, d] → [b, d]`.
pub fn select_token(x: &Tensor, index: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || index >= s[1] {
        return Err(Error::invalid(format!(
            "select_token: position {index} out of range for {s:?}"
        )));
    }
    let (b, t, d) = (s[0], s[1], s[2]);
    let out = x
        .data()
        .chunks(t * d)
        .flat_map(|seq| seq[index * d..(index + 1) * d].iter().copied())
        .collect();
    Ok(Tensor::from_op(
        out,
        vec![b, d],
        "select_token",
        &[x],
        Box::new(move |g, _| {
            let mut gx = vec![0.0; b * t * d];
            for (i, row) in g.chunks(d).enumerate() {
                gx[i * t * d + index * d..i * t * d + (index + 1) * d].copy_from_slice(row);
            }
            vec![Some(gx)]
        }),
    ))
}
