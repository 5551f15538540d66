//! Finite-difference cases for every differentiable op and for the full
//! mini-ViT forward pass with its task loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sdvt_core::autograd::loss::{cosine_distance_loss, cross_entropy, kl_divergence, mse_loss, Target};
use sdvt_core::autograd::{grad_check, grad_check_directional, ops, Tensor};
use sdvt_core::vit::{random_images, Mode, ViTConfig, ViTModel};
use sdvt_core::Result;

pub const EPS: f32 = 1e-3;
pub const OP_TOL: f32 = 1e-2;
pub const CE_TOL: f32 = 1e-2;
pub const MSE_CONST_TOL: f32 = 1e-3;
pub const VIT_TOL: f32 = 5e-2;

/// Measured max relative error of one check and the bound it must stay under.
pub struct GradCase {
    pub name: String,
    pub err: f32,
    pub tol: f32,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.err < self.tol
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(data, shape).unwrap()
}

/// Fixed weights bounded away from zero, so every output element matters.
fn readout(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f32 = rng.random_range(0.5..1.5);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(data, shape).unwrap()
}

fn project(t: &Tensor) -> Result<Tensor> {
    let r = readout(99, t.shape());
    Ok(ops::sum(&ops::mul(t, &r)?))
}

fn directional(
    out: &mut Vec<GradCase>,
    name: &str,
    f: impl Fn(&[Tensor]) -> Result<Tensor>,
    inputs: &[Tensor],
    tol: f32,
) {
    let err = grad_check_directional(f, inputs, 4, EPS, 1234).unwrap();
    out.push(GradCase { name: name.to_string(), err, tol });
}

fn per_entry(out: &mut Vec<GradCase>, name: &str, f: impl Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Tensor], tol: f32) {
    let err = grad_check(f, inputs, EPS).unwrap();
    out.push(GradCase { name: name.to_string(), err, tol });
}

pub fn elementwise_ops() -> Vec<GradCase> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&mut rng, &[2, 3]);
    let b = randn(&mut rng, &[2, 3]);
    let ab = [a.clone(), b.clone()];
    directional(&mut out, "add", |x| project(&ops::add(&x[0], &x[1])?), &ab, OP_TOL);
    directional(&mut out, "sub", |x| project(&ops::sub(&x[0], &x[1])?), &ab, OP_TOL);
    directional(&mut out, "mul", |x| project(&ops::mul(&x[0], &x[1])?), &ab, OP_TOL);
    directional(&mut out, "scale", |x| project(&ops::scale(&x[0], -1.7)), &[a.clone()], OP_TOL);
    directional(&mut out, "gelu", |x| project(&ops::gelu(&x[0])), &[a.clone()], OP_TOL);
    directional(&mut out, "sum", |x| Ok(ops::sum(&ops::mul(&x[0], &x[0])?)), &[a], OP_TOL);
    directional(&mut out, "mean", |x| Ok(ops::mean(&ops::mul(&x[0], &x[1])?)), &ab, OP_TOL);
    out
}

pub fn layout_ops() -> Vec<GradCase> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = randn(&mut rng, &[2, 3, 4]);
    let row = randn(&mut rng, &[3, 4]);
    let tok = randn(&mut rng, &[4]);
    directional(&mut out, "add_broadcast", |x| project(&ops::add_broadcast(&x[0], &x[1])?), &[a.clone(), row], OP_TOL);
    directional(&mut out, "reshape", |x| project(&ops::reshape(&x[0], &[4, 6])?), &[a.clone()], OP_TOL);
    directional(&mut out, "permute", |x| project(&ops::permute(&x[0], &[2, 0, 1])?), &[a.clone()], OP_TOL);
    directional(&mut out, "prepend_token", |x| project(&ops::prepend_token(&x[0], &x[1])?), &[a.clone(), tok], OP_TOL);
    directional(&mut out, "select_token", |x| project(&ops::select_token(&x[0], 1)?), &[a], OP_TOL);
    out
}

pub fn matrix_ops() -> Vec<GradCase> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = randn(&mut rng, &[2, 3, 4]);
    let w = randn(&mut rng, &[4, 5]);
    let b = randn(&mut rng, &[5]);
    directional(&mut out, "linear", |t| project(&ops::linear(&t[0], &t[1], Some(&t[2]))?), &[x.clone(), w.clone(), b], OP_TOL);
    directional(&mut out, "linear_no_bias", |t| project(&ops::linear(&t[0], &t[1], None)?), &[x, w], OP_TOL);
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = randn(&mut rng, if ta { &[2, 4, 3] } else { &[2, 3, 4] });
        let b = randn(&mut rng, if tb { &[2, 5, 4] } else { &[2, 4, 5] });
        directional(
            &mut out,
            &format!("batched_matmul({ta},{tb})"),
            |t| project(&ops::batched_matmul(&t[0], &t[1], ta, tb)?),
            &[a, b],
            OP_TOL,
        );
    }
    out
}

pub fn normalizing_ops() -> Vec<GradCase> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&mut rng, &[3, 5]);
    for t in [1.0, 2.5] {
        directional(&mut out, &format!("softmax T={t}"), |a| project(&ops::softmax(&a[0], t)?), &[x.clone()], OP_TOL);
    }
    let g = randn(&mut rng, &[5]);
    let b = randn(&mut rng, &[5]);
    directional(&mut out, "layer_norm", |a| project(&ops::layer_norm(&a[0], &a[1], &a[2], 1e-6)?), &[x, g, b], OP_TOL);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = randn(&mut rng, &[4, 4]);
    directional(
        &mut out,
        "dropout",
        |a| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(17);
            project(&ops::dropout(&a[0], 0.3, &mut mask_rng)?)
        },
        &[x],
        OP_TOL,
    );
    out
}

pub fn losses() -> Vec<GradCase> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = randn(&mut rng, &[2, 4]);
    per_entry(&mut out, "cross_entropy hard 2x4", |a| cross_entropy(&a[0], Target::Hard(&[1, 3]), 1.0), &[z.clone()], CE_TOL);
    let target = ops::softmax(&randn(&mut rng, &[2, 4]), 1.0).unwrap();
    directional(&mut out, "cross_entropy soft T=2", |a| cross_entropy(&a[0], Target::Soft(&target), 2.0), &[z.clone()], OP_TOL);
    let z2 = randn(&mut rng, &[2, 4]);
    let pair = [z.clone(), z2.clone()];
    directional(
        &mut out,
        "kl_divergence",
        |a| kl_divergence(&ops::softmax(&a[0], 1.0)?, &ops::softmax(&a[1], 1.0)?),
        &pair,
        OP_TOL,
    );
    directional(&mut out, "cosine_distance", |a| cosine_distance_loss(&a[0], &a[1]), &pair, OP_TOL);
    let c = Tensor::new(vec![0.3; 8], &[2, 4]).unwrap();
    per_entry(&mut out, "mse against a constant", |a| mse_loss(&a[0], &c), &[z], MSE_CONST_TOL);
    directional(&mut out, "mse", |a| mse_loss(&a[0], &a[1]), &pair, OP_TOL);
    out
}

/// Every parameter of the mini ViT plus the pixels, through the task loss.
pub fn mini_vit() -> Vec<GradCase> {
    let mut out = Vec::new();
    let config = ViTConfig::mini();
    let model = ViTModel::build(config.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let images = random_images(&mut rng, 2, &config).unwrap();
    let labels = [3usize, 6];
    let bound = model.bind_frozen().unwrap();
    let mut inputs = vec![images];
    bound.visit(|_, t| inputs.push(t.clone()));
    let f = |x: &[Tensor]| -> Result<Tensor> {
        let mut leaves = x[1..].iter();
        let w = bound.map(|_, _| leaves.next().unwrap().clone());
        let out = model.forward(&w, &x[0], Mode::Eval)?;
        cross_entropy(&out.final_logits, Target::Hard(&labels), 1.0)
    };
    let err = grad_check_directional(&f, &inputs, 4, EPS, 21).unwrap();
    out.push(GradCase { name: "mini ViT, all parameters and pixels".into(), err, tol: VIT_TOL });

    // per-entry check of the final head bias, whose entries are well conditioned
    let head_bias = inputs.len() - 1;
    per_entry(
        &mut out,
        "mini ViT, head bias entries",
        |x| {
            let mut all = inputs.clone();
            all[head_bias] = x[0].clone();
            f(&all)
        },
        &[inputs[head_bias].clone()],
        VIT_TOL,
    );
    out
}

pub fn all() -> Vec<GradCase> {
    let mut v = Vec::new();
    for group in [elementwise_ops, layout_ops, matrix_ops, normalizing_ops, losses, mini_vit] {
        v.extend(group());
    }
    v
}
