use std::collections::BTreeSet;

use super::surgery::BlockSelection;
use crate::autograd::loss::{cosine_distance_loss, cross_entropy, kl_divergence, mse_loss, LossSpec, Target};
use crate::autograd::{ops, Tensor};
use crate::error::{Error, Result};
use crate::vit::ForwardOutput;

/// Unweighted loss terms of one batch, as logged in the history.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub task: f32,
    pub distil_ce: f32,
    pub cosine: f32,
    pub mse: f32,
    pub kl: f32,
}

/// A differentiable total together with its logged components.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: Tensor,
    pub components: LossComponents,
}

fn weighted(acc: Option<Tensor>, w: f32, term: &Tensor) -> Result<Option<Tensor>> {
    let t = ops::scale(term, w);
    Ok(Some(match acc {
        None => t,
        Some(a) => ops::add(&a, &t)?,
    }))
}

fn finish(acc: Option<Tensor>, components: LossComponents) -> LossBreakdown {
    LossBreakdown {
        total: acc.unwrap_or_else(|| Tensor::scalar(0.0)),
        components,
    }
}

/// Combined student objective: task CE, CE against the teacher's softened
/// distribution, cosine distance between aligned class-token hidden states
/// and MSE between final logits.
///
/// Terms with zero weight are skipped and reported as 0. The total is
/// accumulated in the fixed order task, distil_ce, cosine, mse, so it equals
/// the weighted sum of the reported components exactly. `alignment` pairs
/// student layer `j` with teacher layer `alignment[j]`; when absent the two
/// models must have equal depth and layers are paired one to one.
pub fn skin_distil_loss(
    student: &ForwardOutput,
    teacher: &ForwardOutput,
    labels: &[usize],
    spec: &LossSpec,
    alignment: Option<&BlockSelection>,
) -> Result<LossBreakdown> {
    spec.validate()?;
    let (s_logits, t_logits) = (&student.final_logits, teacher.final_logits.detach());
    if s_logits.shape() != t_logits.shape() {
        return Err(Error::invalid(format!(
            "student logits {:?} and teacher logits {:?} differ in shape",
            s_logits.shape(),
            t_logits.shape()
        )));
    }
    let mut c = LossComponents::default();
    let mut total = None;
    if spec.w_task > 0.0 {
        let l = cross_entropy(s_logits, Target::Hard(labels), 1.0)?;
        c.task = l.item()?;
        total = weighted(total, spec.w_task, &l)?;
    }
    if spec.w_distil_ce > 0.0 {
        let soft = ops::softmax(&t_logits, spec.temperature)?;
        let l = cross_entropy(s_logits, Target::Soft(&soft), spec.temperature)?;
        c.distil_ce = l.item()?;
        total = weighted(total, spec.w_distil_ce, &l)?;
    }
    if spec.w_cosine > 0.0 {
        let l = hidden_cosine(student, teacher, alignment)?;
        c.cosine = l.item()?;
        total = weighted(total, spec.w_cosine, &l)?;
    }
    if spec.w_mse > 0.0 {
        let l = mse_loss(s_logits, &t_logits)?;
        c.mse = l.item()?;
        total = weighted(total, spec.w_mse, &l)?;
    }
    Ok(finish(total, c))
}

/// Mean over aligned layer pairs of the class-token cosine distance.
fn hidden_cosine(student: &ForwardOutput, teacher: &ForwardOutput, alignment: Option<&BlockSelection>) -> Result<Tensor> {
    let s_layers = student.per_layer_hidden.len();
    let t_layers = teacher.per_layer_hidden.len();
    if s_layers == 0 || t_layers == 0 {
        return Err(Error::invalid("cosine term needs per-layer hidden states from both models"));
    }
    let pairs: Vec<usize> = match alignment {
        Some(sel) => {
            if sel.len() != s_layers {
                return Err(Error::invalid(format!(
                    "alignment has {} entries for a {s_layers}-layer student",
                    sel.len()
                )));
            }
            sel.check_against(t_layers)?;
            sel.indices().to_vec()
        }
        None if s_layers == t_layers => (0..s_layers).collect(),
        None => {
            return Err(Error::invalid(format!(
                "student has {s_layers} layers and teacher {t_layers}; a block alignment is required"
            )))
        }
    };
    let mut sum = None;
    for (j, &i) in pairs.iter().enumerate() {
        let s = ops::select_token(&student.per_layer_hidden[j], 0)?;
        let t = ops::select_token(&teacher.per_layer_hidden[i].detach(), 0)?;
        sum = weighted(sum, 1.0, &cosine_distance_loss(&s, &t)?)?;
    }
    Ok(ops::scale(&sum.expect("at least one layer"), 1.0 / pairs.len() as f32))
}

/// Uniform per-layer weights `1/L`.
pub fn uniform_layer_weights(num_layers: usize) -> Vec<f32> {
    vec![1.0 / num_layers as f32; num_layers]
}

/// Linear combination of the cross-entropies of every per-layer head.
/// Layers with zero weight are skipped.
pub fn fcvit_loss(per_layer_logits: &[Tensor], labels: &[usize], layer_weights: &[f32]) -> Result<LossBreakdown> {
    if per_layer_logits.is_empty() {
        return Err(Error::invalid("fcvit loss needs per-layer logits"));
    }
    if layer_weights.len() != per_layer_logits.len() {
        return Err(Error::invalid(format!(
            "{} layer weights for {} layers",
            layer_weights.len(),
            per_layer_logits.len()
        )));
    }
    if layer_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("layer weights must be finite and non-negative"));
    }
    let mut total = None;
    for (logits, &w) in per_layer_logits.iter().zip(layer_weights) {
        if w > 0.0 {
            total = weighted(total, w, &cross_entropy(logits, Target::Hard(labels), 1.0)?)?;
        }
    }
    let total = total.unwrap_or_else(|| Tensor::scalar(0.0));
    let task = total.item()?;
    Ok(LossBreakdown {
        total,
        components: LossComponents { task, ..Default::default() },
    })
}

/// Validates that `active` is a contiguous run ending at the top layer and
/// returns its lowest index.
pub fn check_active_suffix(active: &BTreeSet<usize>, num_layers: usize) -> Result<usize> {
    let top = num_layers.checked_sub(1).ok_or_else(|| Error::invalid("no layers"))?;
    if !active.contains(&top) {
        return Err(Error::invalid(format!("active heads {active:?} must include the top head {top}")));
    }
    let low = *active.first().expect("non-empty");
    if active.len() != top - low + 1 || active.last() != Some(&top) {
        return Err(Error::invalid(format!(
            "active heads {active:?} must be a contiguous run ending at {top}"
        )));
    }
    Ok(low)
}

/// Task CE on the top head plus, for every active lower head, the KL
/// divergence from the (detached) distribution of the head just above it.
pub fn fcvitprobs_loss(per_layer_logits: &[Tensor], labels: &[usize], active: &BTreeSet<usize>) -> Result<LossBreakdown> {
    let low = check_active_suffix(active, per_layer_logits.len())?;
    let top = per_layer_logits.len() - 1;
    let task = cross_entropy(&per_layer_logits[top], Target::Hard(labels), 1.0)?;
    let mut c = LossComponents {
        task: task.item()?,
        ..Default::default()
    };
    let mut total = task;
    let mut kl_sum = 0.0f32;
    for i in low..top {
        let upper = ops::softmax(&per_layer_logits[i + 1].detach(), 1.0)?;
        let lower = ops::softmax(&per_layer_logits[i], 1.0)?;
        let kl = kl_divergence(&upper, &lower)?;
        kl_sum += kl.item()?;
        total = ops::add(&total, &kl)?;
    }
    c.kl = kl_sum;
    Ok(LossBreakdown { total, components: c })
}
