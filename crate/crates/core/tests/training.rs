mod common;

use std::collections::BTreeSet;

use sdvt_core::autograd::{AdamWConfig, LossSpec};
use sdvt_core::data::Sample;
use sdvt_core::distill::{build_fcvitprobs_schedule, ScheduleConfig};
use sdvt_core::train::{evaluate, predict, train, train_with_observer, EpochRecord, Regime, TrainConfig, HISTORY_HEADER};
use sdvt_core::vit::{Param, ParamGroup, ViTModel};
use sdvt_core::Error;

use common::fixtures::{desk_split, tiny_cfg, tiny_config, tiny_split, train_desk_teacher};

/// Per-channel pixel histograms, `bins` per channel, normalized per image.
fn histogram(s: &Sample, bins: usize) -> Vec<f64> {
    let plane = s.size * s.size;
    let mut h = vec![0.0; 3 * bins];
    for c in 0..3 {
        for v in &s.image[c * plane..(c + 1) * plane] {
            let b = ((v * bins as f32) as usize).min(bins - 1);
            h[c * bins + b] += 1.0 / plane as f64;
        }
    }
    h
}

/// Accuracy of a nearest-centroid classifier on pixel histograms.
fn histogram_baseline(train_set: &[Sample], test_set: &[Sample], bins: usize) -> f64 {
    let mut centroids = vec![vec![0.0; 3 * bins]; 8];
    let mut counts = [0.0; 8];
    for s in train_set {
        for (a, b) in centroids[s.label].iter_mut().zip(histogram(s, bins)) {
            *a += b;
        }
        counts[s.label] += 1.0;
    }
    for (c, n) in centroids.iter_mut().zip(counts) {
        c.iter_mut().for_each(|v| *v /= n);
    }
    let hits = test_set
        .iter()
        .filter(|s| {
            let h = histogram(s, bins);
            let dist = |c: &Vec<f64>| c.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (0..8).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap() == s.label
        })
        .count();
    hits as f64 / test_set.len() as f64
}

#[test]
fn mini_model_learns_and_beats_histogram_baseline() {
    let (tr, te) = desk_split();
    let out = train_desk_teacher(&tr, &te, None);
    let h = &out.history;
    assert_eq!(h.len(), 10);
    assert!(h.records[9].loss_total < h.records[0].loss_total);
    let vit = evaluate(&out.model, &te, 32).unwrap().accuracy;
    assert!(vit >= 0.90, "{vit}");
    for bins in [8, 16, 32] {
        let base = histogram_baseline(&tr, &te, bins);
        assert!(base < vit, "{bins} bins: baseline {base} vs ViT {vit}");
    }
    // the best model is the one with the highest eval BMA
    let best = h.best().unwrap();
    assert_eq!(Some(best.epoch), out.best_epoch);
    let best_bma = evaluate(&out.best, &te, 32).unwrap().bma;
    assert_eq!(best_bma, best.eval.as_ref().unwrap().bma);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let (tr, te) = tiny_split(3);
    let model = ViTModel::build(tiny_config(false)).unwrap();
    let cfg = TrainConfig {
        optimizer: AdamWConfig { learning_rate: 0.0, ..AdamWConfig::default() },
        ..tiny_cfg(Regime::Plain, 1)
    };
    let out = train(model.clone(), None, &tr, &te, &cfg, &LossSpec::default()).unwrap();
    assert!(out.model.weights.bits_eq(&model.weights));
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.history.records[0].epoch, 1);
}

#[test]
fn tiny_runs_are_reproducible() {
    let (tr, te) = tiny_split(3);
    let model = ViTModel::build(tiny_config(true)).unwrap();
    let cfg = TrainConfig { balance: true, ..tiny_cfg(Regime::Fcvit, 2) };
    let a = train(model.clone(), None, &tr, &te, &cfg, &LossSpec::default()).unwrap();
    let b = train(model, None, &tr, &te, &cfg, &LossSpec::default()).unwrap();
    assert!(a.model.weights.bits_eq(&b.model.weights));
    assert_eq!(a.history.to_csv_untimed(), b.history.to_csv_untimed());
    assert!(a.history.to_csv().starts_with(HISTORY_HEADER));
}

#[test]
fn fcvitprobs_schedule_trace() {
    let (tr, te) = tiny_split(3);
    let model = ViTModel::build(tiny_config(true)).unwrap();
    let schedule = ScheduleConfig { m: 1, n: 1, p: 1 };
    let cfg = TrainConfig { schedule: Some(schedule), eval_every: 0, ..tiny_cfg(Regime::Fcvitprobs, 99) };
    let phases = build_fcvitprobs_schedule(&schedule, 3);
    let starts: Vec<usize> = phases.iter().map(|p| p.epochs.start + 1).collect();
    assert_eq!(starts, [1, 2, 3, 4]);

    let mut snapshots = vec![model.clone()];
    let mut seen: Vec<(usize, Option<usize>)> = Vec::new();
    let mut observe = |r: &EpochRecord, m: &ViTModel| {
        seen.push((r.epoch, r.phase));
        snapshots.push(m.clone());
        Ok(())
    };
    let out = train_with_observer(model, None, &tr, &te, &cfg, &LossSpec::default(), &mut observe).unwrap();
    assert_eq!(out.history.len(), 4);
    assert_eq!(seen, [(1, Some(0)), (2, Some(1)), (3, Some(2)), (4, Some(3))]);

    for (e, phase) in phases.iter().enumerate() {
        let (before, after) = (&snapshots[e], &snapshots[e + 1]);
        let mut changed: BTreeSet<ParamGroup> = BTreeSet::new();
        let mut old: Vec<(String, Param)> = Vec::new();
        before.weights.visit(|n, p| old.push((n.to_string(), p.clone())));
        let mut i = 0;
        after.weights.visit(|n, p| {
            if !p.bits_eq(&old[i].1) {
                changed.insert(after.weights.group_of(n));
            }
            i += 1;
        });
        assert!(changed.is_subset(&phase.trainable), "epoch {}: {changed:?} vs {:?}", e + 1, phase.trainable);
        assert!(!changed.is_empty(), "epoch {} updated nothing", e + 1);
    }
}

#[test]
fn missing_or_unexpected_teacher_is_rejected() {
    let (tr, te) = tiny_split(2);
    let model = ViTModel::build(tiny_config(false)).unwrap();
    let distil = tiny_cfg(Regime::SkinDistil, 1);
    assert!(matches!(train(model.clone(), None, &tr, &te, &distil, &LossSpec::default()), Err(Error::InvalidArgument(_))));
    let plain = tiny_cfg(Regime::Plain, 1);
    assert!(matches!(
        train(model.clone(), Some(&model), &tr, &te, &plain, &LossSpec::default()),
        Err(Error::InvalidArgument(_))
    ));
    let fcvit = tiny_cfg(Regime::Fcvit, 1);
    assert!(matches!(train(model, None, &tr, &te, &fcvit, &LossSpec::default()), Err(Error::InvalidArgument(_))));
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let (tr, te) = tiny_split(2);
    let mut model = ViTModel::build(tiny_config(false)).unwrap();
    model.weights.heads[0].bias.data[0] = f32::NAN;
    match train(model, None, &tr, &te, &tiny_cfg(Regime::Plain, 1), &LossSpec::default()) {
        Err(Error::NumericFailure(msg)) => {
            assert!(msg.contains("epoch 1") && msg.contains("batch 0") && msg.contains("task"), "{msg}")
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn evaluate_degenerate_model() {
    let (_, te) = tiny_split(3);
    let mut model = ViTModel::build(tiny_config(false)).unwrap();
    let head = &mut model.weights.heads[0];
    head.weight = Param::zeros(&head.weight.shape.clone());
    head.bias = Param::zeros(&head.bias.shape.clone());
    let before = model.clone();
    let preds = predict(&model, &te, 4).unwrap();
    assert!(preds.iter().all(|&p| p == 0));
    let report = evaluate(&model, &te, 4).unwrap();
    let freq = te.iter().filter(|s| s.label == 0).count() as f64 / te.len() as f64;
    assert_eq!(report.accuracy, freq);
    assert_eq!(report, evaluate(&model, &te, 7).unwrap());
    assert_eq!(model, before);
    assert!(matches!(evaluate(&model, &[], 4), Err(Error::InvalidArgument(_))));
}

#[test]
fn config_validation() {
    for bad in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { regime: Regime::Fcvitprobs, schedule: None, ..TrainConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::InvalidArgument(_))));
    }
    let d = TrainConfig::default();
    assert_eq!((d.epochs, d.batch_size), (20, 64));
    let json = serde_json::to_string(&TrainConfig::desk()).unwrap();
    let back: TrainConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, TrainConfig::desk());
}
