use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ViTConfig;
use super::weights::{BlockOf, LinearOf, NormOf, Param, ParamGroup, Weights};
use crate::autograd::ops;
use crate::autograd::Tensor;
use crate::error::{Error, Result};

const LN_EPS: f32 = 1e-6;

/// A ViT classifier: its configuration and stored parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ViTModel {
    pub config: ViTConfig,
    pub weights: Weights<Param>,
}

/// Forward-pass mode. Dropout only draws from the generator in training mode.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Everything one forward pass exposes.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Residual stream after each block, `[batch, tokens, hidden]`.
    pub per_layer_hidden: Vec<Tensor>,
    /// Logits of every per-layer head; empty without per-layer heads.
    pub per_layer_logits: Vec<Tensor>,
    pub final_logits: Tensor,
    /// Attention probabilities per block, `[batch, heads, tokens, tokens]`.
    pub attentions: Vec<Tensor>,
    /// Final class-token state after the final norm, `[batch, hidden]`.
    pub embedding: Tensor,
}

fn trunc_normal(rng: &mut ChaCha8Rng, std: f32, shape: &[usize]) -> Param {
    let normal = Normal::new(0.0f32, std).expect("valid std");
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect();
    Param {
        shape: shape.to_vec(),
        data,
    }
}

fn init_norm(d: usize) -> NormOf<Param> {
    NormOf {
        gamma: Param::filled(&[d], 1.0),
        beta: Param::zeros(&[d]),
    }
}

/// Splits a `[channels, size, size]` image into flattened patches.
///
/// Patches are ordered row-major over the grid; each is flattened
/// channel-major, then by row, then by column.
pub fn patchify(image: &[f32], channels: usize, size: usize, patch: usize) -> Result<Vec<f32>> {
    if patch == 0 || size % patch != 0 {
        return Err(Error::invalid(format!("patchify: {size} px is not divisible into {patch} px patches")));
    }
    if image.len() != channels * size * size {
        return Err(Error::invalid(format!(
            "patchify: expected {channels}x{size}x{size} image, got {} values",
            image.len()
        )));
    }
    let g = size / patch;
    let mut out = Vec::with_capacity(image.len());
    for gy in 0..g {
        for gx in 0..g {
            for c in 0..channels {
                for y in 0..patch {
                    let row = (c * size + gy * patch + y) * size + gx * patch;
                    out.extend_from_slice(&image[row..row + patch]);
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &[f32], channels: usize, size: usize, patch: usize) -> Result<Vec<f32>> {
    if patch == 0 || size % patch != 0 || patches.len() != channels * size * size {
        return Err(Error::invalid("unpatchify: inconsistent dimensions"));
    }
    let g = size / patch;
    let mut out = vec![0.0; patches.len()];
    let mut src = patches.iter();
    for gy in 0..g {
        for gx in 0..g {
            for c in 0..channels {
                for y in 0..patch {
                    let row = (c * size + gy * patch + y) * size + gx * patch;
                    for x in 0..patch {
                        out[row + x] = *src.next().unwrap();
                    }
                }
            }
        }
    }
    Ok(out)
}

impl ViTModel {
    /// Fresh model: truncated-normal (std `config.init_std`, cut at two std)
    /// weights and embeddings, zero biases, unit/zero norms. Deterministic in
    /// `config.seed`.
    pub fn build(config: ViTConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let std = config.init_std;
        Ok(Self::assemble(config, &mut |shape| trunc_normal(&mut rng, std, shape)))
    }

    /// Correctly shaped model with every weight zero; used when the values
    /// are about to be overwritten.
    pub fn skeleton(config: ViTConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::assemble(config, &mut Param::zeros))
    }

    fn assemble(config: ViTConfig, init: &mut dyn FnMut(&[usize]) -> Param) -> Self {
        let d = config.hidden_dim;
        let mut linear = |fan_in: usize, fan_out: usize| LinearOf {
            weight: init(&[fan_in, fan_out]),
            bias: Param::zeros(&[fan_out]),
        };
        let patch_proj = linear(config.patch_dim(), d);
        let class_token = init(&[d]);
        let pos_embed = init(&[config.num_tokens(), d]);
        let mut linear = |fan_in: usize, fan_out: usize| LinearOf {
            weight: init(&[fan_in, fan_out]),
            bias: Param::zeros(&[fan_out]),
        };
        let blocks = (0..config.num_layers)
            .map(|_| BlockOf {
                ln1: init_norm(d),
                q: linear(d, d),
                k: linear(d, d),
                v: linear(d, d),
                out: linear(d, d),
                ln2: init_norm(d),
                fc1: linear(d, config.mlp_dim),
                fc2: linear(config.mlp_dim, d),
            })
            .collect();
        let heads = (0..config.num_heads_total())
            .map(|_| linear(d, config.num_classes))
            .collect();
        ViTModel {
            weights: Weights {
                patch_proj,
                class_token,
                pos_embed,
                blocks,
                final_norm: init_norm(d),
                heads,
            },
            config,
        }
    }

    /// Exact number of trainable scalars.
    pub fn param_count(&self) -> u64 {
        self.weights.param_count()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.blocks.len()
    }

    /// Wraps every parameter in a graph leaf; `trainable` decides which
    /// groups collect gradients.
    pub fn bind(&self, mut trainable: impl FnMut(ParamGroup) -> bool) -> Result<Weights<Tensor>> {
        let mut err = None;
        let bound = self.weights.map(|name, p| {
            let group = self.weights.group_of(name);
            let t = if trainable(group) {
                Tensor::param(p.data.clone(), &p.shape)
            } else {
                Tensor::new(p.data.clone(), &p.shape)
            };
            t.unwrap_or_else(|e| {
                err.get_or_insert(e);
                Tensor::scalar(0.0)
            })
        });
        match err {
            Some(e) => Err(e),
            None => Ok(bound),
        }
    }

    /// Leaves with no gradient tracking.
    pub fn bind_frozen(&self) -> Result<Weights<Tensor>> {
        self.bind(|_| false)
    }

    /// Convenience evaluation forward with no graph recorded.
    pub fn forward_eval(&self, images: &Tensor) -> Result<ForwardOutput> {
        let bound = self.bind_frozen()?;
        self.forward(&bound, images, Mode::Eval)
    }

    fn check_images(&self, images: &Tensor) -> Result<usize> {
        let c = &self.config;
        match images.shape() {
            [b, ch, h, w] if *ch == c.channels && *h == c.image_size && *w == c.image_size => Ok(*b),
            s => Err(Error::invalid(format!(
                "forward: images must be [batch, {}, {}, {}], got {s:?}",
                c.channels, c.image_size, c.image_size
            ))),
        }
    }

    /// Runs the model on `[batch, C, H, W]` images using the bound leaves.
    pub fn forward(&self, w: &Weights<Tensor>, images: &Tensor, mut mode: Mode<'_>) -> Result<ForwardOutput> {
        let c = &self.config;
        let batch = self.check_images(images)?;
        let (g, p, ch) = (c.grid(), c.patch_size, c.channels);
        let (d, heads, dh, t) = (c.hidden_dim, c.num_heads, c.head_dim(), c.num_tokens());
        let drop = c.dropout_prob;

        let dropout = |x: &Tensor, mode: &mut Mode<'_>| -> Result<Tensor> {
            match mode {
                Mode::Train(rng) if drop > 0.0 => ops::dropout(x, drop, &mut **rng),
                _ => Ok(x.clone()),
            }
        };

        // [b, c, g, p, g, p] → [b, g, g, c, p, p] → [b, patches, c·p·p]
        let x = ops::reshape(images, &[batch, ch, g, p, g, p])?;
        let x = ops::permute(&x, &[0, 2, 4, 1, 3, 5])?;
        let x = ops::reshape(&x, &[batch, g * g, c.patch_dim()])?;
        let x = ops::linear(&x, &w.patch_proj.weight, Some(&w.patch_proj.bias))?;
        let x = ops::prepend_token(&x, &w.class_token)?;
        let x = ops::add_broadcast(&x, &w.pos_embed)?;
        let mut x = dropout(&x, &mut mode)?;

        let scale = 1.0 / (dh as f32).sqrt();
        let split_heads = |y: &Tensor| -> Result<Tensor> {
            let y = ops::reshape(y, &[batch, t, heads, dh])?;
            let y = ops::permute(&y, &[0, 2, 1, 3])?;
            ops::reshape(&y, &[batch * heads, t, dh])
        };

        let mut per_layer_hidden = Vec::with_capacity(c.num_layers);
        let mut per_layer_logits = Vec::new();
        let mut attentions = Vec::with_capacity(c.num_layers);
        for (i, blk) in w.blocks.iter().enumerate() {
            let h = ops::layer_norm(&x, &blk.ln1.gamma, &blk.ln1.beta, LN_EPS)?;
            let q = split_heads(&ops::linear(&h, &blk.q.weight, Some(&blk.q.bias))?)?;
            let k = split_heads(&ops::linear(&h, &blk.k.weight, Some(&blk.k.bias))?)?;
            let v = split_heads(&ops::linear(&h, &blk.v.weight, Some(&blk.v.bias))?)?;
            let scores = ops::scale(&ops::batched_matmul(&q, &k, false, true)?, scale);
            let attn = ops::softmax(&scores, 1.0)?;
            let ctx = ops::batched_matmul(&dropout(&attn, &mut mode)?, &v, false, false)?;
            let ctx = ops::reshape(&ctx, &[batch, heads, t, dh])?;
            let ctx = ops::permute(&ctx, &[0, 2, 1, 3])?;
            let ctx = ops::reshape(&ctx, &[batch, t, d])?;
            let a = ops::linear(&ctx, &blk.out.weight, Some(&blk.out.bias))?;
            x = ops::add(&x, &dropout(&a, &mut mode)?)?;

            let h = ops::layer_norm(&x, &blk.ln2.gamma, &blk.ln2.beta, LN_EPS)?;
            let m = ops::gelu(&ops::linear(&h, &blk.fc1.weight, Some(&blk.fc1.bias))?);
            let m = ops::linear(&dropout(&m, &mut mode)?, &blk.fc2.weight, Some(&blk.fc2.bias))?;
            x = ops::add(&x, &dropout(&m, &mut mode)?)?;

            per_layer_hidden.push(x.clone());
            attentions.push(ops::reshape(&attn, &[batch, heads, t, t])?);
            if c.per_layer_heads && i + 1 < c.num_layers {
                let cls = self.normed_class_token(w, &x)?;
                let head = &w.heads[i];
                per_layer_logits.push(ops::linear(&cls, &head.weight, Some(&head.bias))?);
            }
        }

        let embedding = self.normed_class_token(w, &x)?;
        let head = w.heads.last().expect("model has a final head");
        let final_logits = ops::linear(&embedding, &head.weight, Some(&head.bias))?;
        if c.per_layer_heads {
            per_layer_logits.push(final_logits.clone());
        }
        Ok(ForwardOutput {
            per_layer_hidden,
            per_layer_logits,
            final_logits,
            attentions,
            embedding,
        })
    }

    /// Class-token row of a hidden state passed through the shared final norm.
    fn normed_class_token(&self, w: &Weights<Tensor>, hidden: &Tensor) -> Result<Tensor> {
        let cls = ops::select_token(hidden, 0)?;
        ops::layer_norm(&cls, &w.final_norm.gamma, &w.final_norm.beta, LN_EPS)
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.weights.visit(|_, p| ok &= p.data.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Stacks `[C, H, W]` images into a `[batch, C, H, W]` constant tensor.
pub fn stack_images(images: &[&[f32]], channels: usize, size: usize) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::invalid("stack_images: empty batch"));
    }
    let per = channels * size * size;
    let mut data = Vec::with_capacity(per * images.len());
    for img in images {
        if img.len() != per {
            return Err(Error::invalid(format!(
                "stack_images: image has {} values, expected {per}",
                img.len()
            )));
        }
        data.extend_from_slice(img);
    }
    Tensor::new(data, &[images.len(), channels, size, size])
}

/// Random images in `[0, 1)` for smoke tests and benchmarks.
pub fn random_images(rng: &mut impl Rng, batch: usize, config: &ViTConfig) -> Result<Tensor> {
    let n = batch * config.channels * config.image_size * config.image_size;
    let data = (0..n).map(|_| rng.random::<f32>()).collect();
    Tensor::new(data, &[batch, config.channels, config.image_size, config.image_size])
}
