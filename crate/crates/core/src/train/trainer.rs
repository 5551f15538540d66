use std::collections::BTreeSet;
use std::fs;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Regime, TrainConfig};
use super::evaluate::{argmax, evaluate};
use super::history::{EpochRecord, History};
use crate::autograd::loss::{cross_entropy, LossSpec, Target};
use crate::autograd::{adamw_step, OptimState, ParamUpdate, Tensor};
use crate::data::{augment, augment_rng, Sample};
use crate::distill::{
    build_fcvitprobs_schedule, fcvit_loss, fcvitprobs_loss, phase_for_epoch, skin_distil_loss, uniform_layer_weights,
    BlockSelection, LossBreakdown, LossComponents, TrainPhase,
};
use crate::error::{Error, Result};
use crate::vit::{save_checkpoint, stack_images, ForwardOutput, Mode, ParamGroup, ViTModel, Weights};

const SHUFFLE_SALT: u64 = 0x7368_7566_666c_6531;
const DROPOUT_SALT: u64 = 0x6472_6f70_6f75_7431;

/// Called after every epoch with the new record and the current parameters.
pub type EpochObserver<'a> = dyn FnMut(&EpochRecord, &ViTModel) -> Result<()> + 'a;

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Parameters after the last epoch.
    pub model: ViTModel,
    /// Parameters at the epoch with the highest eval BMA, or the final ones without evaluation.
    pub best: ViTModel,
    pub best_epoch: Option<usize>,
    pub history: History,
}

pub fn train(
    model: ViTModel,
    teacher: Option<&ViTModel>,
    train_set: &[Sample],
    test_set: &[Sample],
    cfg: &TrainConfig,
    spec: &LossSpec,
) -> Result<TrainOutput> {
    train_with_observer(model, teacher, train_set, test_set, cfg, spec, &mut |_, _| Ok(()))
}

fn check_set(model: &ViTModel, set: &[Sample], what: &str) -> Result<()> {
    let c = &model.config;
    if set.is_empty() {
        return Err(Error::invalid(format!("{what} set is empty")));
    }
    for s in set {
        if s.size != c.image_size || s.image.len() != c.channels * s.size * s.size {
            return Err(Error::invalid(format!(
                "{what} sample {} does not match the model's {}px input",
                s.source, c.image_size
            )));
        }
        if s.label >= c.num_classes {
            return Err(Error::invalid(format!(
                "{what} sample {} has label {} for {} classes",
                s.source, s.label, c.num_classes
            )));
        }
    }
    Ok(())
}

struct Plan {
    phases: Vec<TrainPhase>,
    layer_weights: Vec<f32>,
    alignment: Option<BlockSelection>,
}

fn plan(model: &ViTModel, teacher: Option<&ViTModel>, cfg: &TrainConfig, spec: &LossSpec) -> Result<Plan> {
    cfg.validate()?;
    spec.validate()?;
    model.config.validate()?;
    let layers = model.num_layers();
    match (cfg.regime.needs_teacher(), teacher) {
        (true, None) => return Err(Error::invalid(format!("regime {:?} needs a teacher", cfg.regime))),
        (false, Some(_)) => return Err(Error::invalid(format!("regime {:?} takes no teacher", cfg.regime))),
        _ => {}
    }
    if let Some(t) = teacher {
        let (a, b) = (&model.config, &t.config);
        if (a.image_size, a.channels, a.num_classes) != (b.image_size, b.channels, b.num_classes) {
            return Err(Error::invalid("teacher and student disagree on input geometry or class count"));
        }
    }
    if cfg.regime.needs_per_layer_heads() && !model.config.per_layer_heads {
        return Err(Error::invalid(format!("regime {:?} needs a model with per-layer heads", cfg.regime)));
    }
    let layer_weights = match &cfg.layer_weights {
        Some(w) if w.len() != layers => {
            return Err(Error::invalid(format!("{} layer weights for {layers} layers", w.len())));
        }
        Some(w) => w.clone(),
        None => uniform_layer_weights(layers),
    };
    let alignment = cfg.alignment.clone().map(BlockSelection::new).transpose()?;
    if cfg.regime == Regime::SkinDistil && spec.w_cosine > 0.0 {
        let t_layers = teacher.map_or(0, |t| t.num_layers());
        match &alignment {
            Some(sel) => {
                if sel.len() != layers {
                    return Err(Error::invalid(format!("alignment has {} entries for {layers} layers", sel.len())));
                }
                sel.check_against(t_layers)?;
            }
            None if t_layers != layers => {
                return Err(Error::invalid("the cosine term needs a block alignment when depths differ"));
            }
            None => {}
        }
    }
    let phases = match (cfg.regime, cfg.schedule) {
        (Regime::Fcvitprobs, Some(s)) => build_fcvitprobs_schedule(&s, layers),
        _ => Vec::new(),
    };
    Ok(Plan { phases, layer_weights, alignment })
}

/// Sample order of one epoch, a deterministic function of `(seed, epoch)`.
fn epoch_order(set: &[Sample], cfg: &TrainConfig, epoch: usize, num_classes: usize) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    rng.set_stream(epoch as u64);
    if cfg.balance {
        let mut counts = vec![0usize; num_classes];
        for s in set {
            counts[s.label] += 1;
        }
        let w: Vec<f64> = set.iter().map(|s| 1.0 / counts[s.label] as f64).collect();
        let dist = WeightedIndex::new(&w).map_err(|e| Error::invalid(format!("balanced sampling: {e}")))?;
        Ok((0..set.len()).map(|_| dist.sample(&mut rng)).collect())
    } else {
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut rng);
        Ok(order)
    }
}

struct Ctx<'a> {
    cfg: &'a TrainConfig,
    spec: &'a LossSpec,
    plan: &'a Plan,
    teacher: Option<(&'a ViTModel, Weights<Tensor>)>,
}

fn batch_loss(
    ctx: &Ctx<'_>,
    out: &ForwardOutput,
    images: &Tensor,
    labels: &[usize],
    phase: Option<&TrainPhase>,
) -> Result<LossBreakdown> {
    match ctx.cfg.regime {
        Regime::Plain => {
            let l = cross_entropy(&out.final_logits, Target::Hard(labels), 1.0)?;
            let task = l.item()?;
            Ok(LossBreakdown { total: l, components: LossComponents { task, ..Default::default() } })
        }
        Regime::SkinDistil | Regime::CascadeStep => {
            let (t, tw) = ctx.teacher.as_ref().expect("teacher checked in plan");
            let t_out = t.forward(tw, images, Mode::Eval)?;
            if ctx.cfg.regime == Regime::CascadeStep {
                let spec = LossSpec { w_cosine: 0.0, w_mse: 0.0, w_kl: 0.0, ..*ctx.spec };
                skin_distil_loss(out, &t_out, labels, &spec, None)
            } else {
                skin_distil_loss(out, &t_out, labels, ctx.spec, ctx.plan.alignment.as_ref())
            }
        }
        Regime::Fcvit => fcvit_loss(&out.per_layer_logits, labels, &ctx.plan.layer_weights),
        Regime::Fcvitprobs => {
            let phase = phase.expect("fcvitprobs epochs always fall in a phase");
            fcvitprobs_loss(&out.per_layer_logits, labels, &phase.active_heads)
        }
    }
}

/// Names of the loss components the regime computes.
fn active_terms(regime: Regime, spec: &LossSpec) -> String {
    let terms: Vec<&str> = match regime {
        Regime::Plain | Regime::Fcvit | Regime::Fcvitprobs => vec!["task"],
        Regime::CascadeStep => [("task", spec.w_task), ("distil_ce", spec.w_distil_ce)]
            .into_iter()
            .filter(|(_, w)| *w != 0.0)
            .map(|(n, _)| n)
            .collect(),
        Regime::SkinDistil => [
            ("task", spec.w_task),
            ("distil_ce", spec.w_distil_ce),
            ("cosine", spec.w_cosine),
            ("mse", spec.w_mse),
            ("kl", spec.w_kl),
        ]
        .into_iter()
        .filter(|(_, w)| *w != 0.0)
        .map(|(n, _)| n)
        .collect(),
    };
    format!("the {} term(s)", terms.join(", "))
}

fn non_finite(c: &LossComponents) -> bool {
    ![c.task, c.distil_ce, c.cosine, c.mse, c.kl].iter().all(|v| v.is_finite())
}

/// Applies one optimizer step to every leaf that received a gradient.
fn apply_gradients(model: &mut ViTModel, bound: &Weights<Tensor>, state: &mut OptimState) -> Result<()> {
    let mut grads = Vec::new();
    bound.visit(|_, t| grads.push(t.grad()));
    let leaves = model.weights.leaves_mut();
    let mut updates = Vec::new();
    for ((name, p), g) in leaves.into_iter().zip(grads.iter()) {
        if let Some(g) = g {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericFailure(format!("non-finite gradient for {name}")));
            }
            updates.push((name, p, g.as_slice()));
        }
    }
    let mut params: Vec<ParamUpdate<'_>> = updates
        .iter_mut()
        .map(|(name, p, g)| ParamUpdate { name: name.as_str(), value: p.data.as_mut_slice(), grad: Some(*g) })
        .collect();
    if params.is_empty() {
        return Ok(());
    }
    adamw_step(&mut params, state)
}

/// Trains `model` under `cfg.regime`, calling `observer` after each epoch.
///
/// Batches follow a shuffle seeded by `(cfg.seed, epoch)`; every sample gets
/// its own augmentation stream. The last partial batch is kept. A
/// non-finite loss or gradient aborts with [`Error::NumericFailure`] naming
/// the epoch, the batch and the loss components.
pub fn train_with_observer(
    mut model: ViTModel,
    teacher: Option<&ViTModel>,
    train_set: &[Sample],
    test_set: &[Sample],
    cfg: &TrainConfig,
    spec: &LossSpec,
    observer: &mut EpochObserver<'_>,
) -> Result<TrainOutput> {
    let plan = plan(&model, teacher, cfg, spec)?;
    check_set(&model, train_set, "training")?;
    if cfg.eval_every > 0 {
        check_set(&model, test_set, "test")?;
    }
    let ctx = Ctx {
        cfg,
        spec,
        plan: &plan,
        teacher: teacher.map(|t| t.bind_frozen().map(|w| (t, w))).transpose()?,
    };
    let (classes, channels, size) = (model.config.num_classes, model.config.channels, model.config.image_size);
    let epochs = cfg.total_epochs(model.num_layers());
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = (epochs * batches_per_epoch) as f64;
    let base_lr = cfg.optimizer.learning_rate;
    let mut state = OptimState::new(cfg.optimizer)?;
    let mut history = History::default();
    let mut best: Option<(f64, usize, ViTModel)> = None;
    let all: BTreeSet<ParamGroup> = BTreeSet::new();
    let mut step = 0usize;

    for epoch in 0..epochs {
        let started = Instant::now();
        let phase_idx = plan.phases.iter().position(|p| p.contains_epoch(epoch));
        let phase = phase_for_epoch(&plan.phases, epoch);
        let trainable = phase.map_or(&all, |p| &p.trainable);
        let order = epoch_order(train_set, cfg, epoch, classes)?;
        let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_SALT);
        drop_rng.set_stream(epoch as u64);

        let (mut loss_sum, mut comp_sum, mut correct) = (0.0f64, [0.0f64; 5], 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<Vec<f32>> = chunk
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let mut rng = augment_rng(cfg.seed, epoch, b * cfg.batch_size + k);
                    augment(&train_set[i].image, size, &cfg.augment, &mut rng)
                })
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set[i].label).collect();
            let refs: Vec<&[f32]> = images.iter().map(Vec::as_slice).collect();
            let x = stack_images(&refs, channels, size)?;

            let bound = model.bind(|g| phase.is_none() || trainable.contains(&g))?;
            let out = model.forward(&bound, &x, Mode::Train(&mut drop_rng))?;
            let loss = batch_loss(&ctx, &out, &x, &labels, phase).map_err(|e| match e {
                Error::NumericInput(m) => Error::NumericFailure(format!(
                    "non-finite loss at epoch {}, batch {b}: {} rejected its input: {m}",
                    epoch + 1,
                    active_terms(cfg.regime, spec)
                )),
                other => other,
            })?;
            let total = loss.total.item()?;
            let c = loss.components;
            if !total.is_finite() || non_finite(&c) {
                return Err(Error::NumericFailure(format!(
                    "non-finite loss at epoch {}, batch {b}: total {total}, task {}, distil_ce {}, cosine {}, mse {}, kl {}",
                    epoch + 1,
                    c.task,
                    c.distil_ce,
                    c.cosine,
                    c.mse,
                    c.kl
                )));
            }
            if loss.total.requires_grad() {
                loss.total.backward()?;
                if cfg.cosine_decay {
                    let t = step as f64 / total_steps;
                    state.hyper.learning_rate = (base_lr as f64 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32;
                }
                apply_gradients(&mut model, &bound, &mut state).map_err(|e| match e {
                    Error::NumericFailure(m) => {
                        Error::NumericFailure(format!("{m} at epoch {}, batch {b}", epoch + 1))
                    }
                    other => other,
                })?;
            }
            step += 1;

            let n = labels.len() as f64;
            loss_sum += total as f64 * n;
            for (acc, v) in comp_sum.iter_mut().zip([c.task, c.distil_ce, c.cosine, c.mse, c.kl]) {
                *acc += v as f64 * n;
            }
            let logits = out.final_logits.data();
            correct += logits.chunks(classes).zip(&labels).filter(|(row, &y)| argmax(row) == y).count();
        }

        let n = order.len() as f64;
        let last = epoch + 1 == epochs;
        let eval = if cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last) {
            Some(evaluate(&model, test_set, cfg.eval_batch_size)?)
        } else {
            None
        };
        if let Some(m) = &eval {
            if best.as_ref().is_none_or(|(bma, _, _)| m.bma > *bma) {
                best = Some((m.bma, epoch + 1, model.clone()));
            }
        }
        let mean = |v: f64| (v / n) as f32;
        let record = EpochRecord {
            epoch: epoch + 1,
            loss_total: mean(loss_sum),
            components: LossComponents {
                task: mean(comp_sum[0]),
                distil_ce: mean(comp_sum[1]),
                cosine: mean(comp_sum[2]),
                mse: mean(comp_sum[3]),
                kl: mean(comp_sum[4]),
            },
            train_acc: correct as f64 / n,
            eval,
            seconds: started.elapsed().as_secs_f64(),
            phase: phase_idx,
        };
        observer(&record, &model)?;
        history.push(record)?;
    }

    let (best_epoch, best) = match best {
        Some((_, e, m)) => (Some(e), m),
        None => (None, model.clone()),
    };
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&best, dir.join("best.sdvt"))?;
        save_checkpoint(&model, dir.join("final.sdvt"))?;
        history.write_csv(dir.join("history.csv"))?;
    }
    Ok(TrainOutput { model, best, best_epoch, history })
}
