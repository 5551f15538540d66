//! Acceptance suite. Runs criteria 1 to 11 in order and prints one
//! PASS/FAIL line for each; exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sdvt_core::autograd::loss::{cross_entropy, kl_divergence, LossSpec, Target};
use sdvt_core::autograd::{ops, Tensor};
use sdvt_core::data::{ClassTaxonomy, Sample};
use sdvt_core::distill::{
    cascade_distill, fcvitprobs_loss, init_student_from_teacher, skin_distil_loss, strip_last_block, BlockSelection,
    CascadeResult,
};
use sdvt_core::metrics::{bench_throughput, MetricsReport};
use sdvt_core::train::{evaluate, train, Regime, TrainConfig};
use sdvt_core::vit::{load_checkpoint, random_images, ViTConfig, ViTModel};

use common::fixtures::{self, desk_cfg, desk_split, mini_config, train_desk_teacher, DESK_SEED};
use common::grad_cases;

// criterion 1
const TARGET_TEACHER_PARAMS: f64 = 85.85e6;
const TARGET_STUDENT_PARAMS: f64 = 43.27e6;
const PARAM_REL_TOL: f64 = 0.005;
// criterion 4
const LOSS_IDENTITY_TOL: f32 = 1e-6;
// criterion 5
const MIN_ACCURACY: f64 = 0.90;
const MIN_BMA: f64 = 0.85;
// criterion 6
const MIN_RETENTION: f64 = 0.95;
// criterion 7
const GUIDANCE_SEEDS: [u64; 3] = [1, 2, 3];
const GUIDANCE_SLACK: f64 = 0.01;
// criterion 8
const MIN_SPEEDUP: f64 = 1.40;
const BENCH_BATCH: usize = 16;
const BENCH_WARMUP: usize = 2;
const BENCH_REPS: usize = 5;
/// Back-to-back (12, 6) measurement pairs; the median pair ratio is reported.
const BENCH_ROUNDS: usize = 5;
// criterion 9
const MIN_DEPTH6_RATIO: f64 = 0.90;
// criterion 10
const METRIC_INSTANCES: usize = 1000;
const METRIC_TOL: f64 = 1e-12;

struct Line {
    passed: bool,
    detail: String,
}

fn line(passed: bool, detail: impl Into<String>) -> Line {
    Line { passed, detail: detail.into() }
}

fn report(n: usize, started: Instant, l: Line) -> bool {
    println!(
        "criterion {n:>2}: {} ({:.1}s) {}",
        if l.passed { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        l.detail
    );
    l.passed
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b
}

fn param_anchor() -> Line {
    let teacher = ViTModel::skeleton(ViTConfig::paper()).unwrap();
    let student = init_student_from_teacher(&teacher, &BlockSelection::every_other()).unwrap();
    let (t, s) = (teacher.param_count() as f64, student.param_count() as f64);
    let (et, es) = (rel(t, TARGET_TEACHER_PARAMS), rel(s, TARGET_STUDENT_PARAMS));
    line(
        et <= PARAM_REL_TOL && es <= PARAM_REL_TOL && student.num_layers() == 6,
        format!(
            "teacher {t} params ({:.3}% off 85.85M), 6-block student {s} ({:.3}% off 43.27M), bound {:.1}%",
            et * 100.0,
            es * 100.0,
            PARAM_REL_TOL * 100.0
        ),
    )
}

fn gradients() -> Line {
    let cases = grad_cases::all();
    let failed: Vec<String> = cases
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{} {:.2e}>={:.0e}", c.name, c.err, c.tol))
        .collect();
    let worst_op = cases
        .iter()
        .filter(|c| !c.name.starts_with("mini ViT"))
        .map(|c| c.err)
        .fold(0.0f32, f32::max);
    let vit = cases
        .iter()
        .filter(|c| c.name.starts_with("mini ViT"))
        .map(|c| c.err)
        .fold(0.0f32, f32::max);
    line(
        failed.is_empty(),
        format!(
            "{} checks; worst op error {worst_op:.2e}, mini ViT composite {vit:.2e}{}",
            cases.len(),
            if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
        ),
    )
}

/// Blocks `0..depth` of `a` and `b` are bitwise equal.
fn prefix_blocks_equal(a: &ViTModel, b: &ViTModel, depth: usize) -> bool {
    (0..depth).all(|i| {
        let (x, y) = (&a.weights.blocks[i], &b.weights.blocks[i]);
        let mut lx = Vec::new();
        x.map("", &mut |_, p| lx.push(p.clone()));
        let mut ly = Vec::new();
        y.map("", &mut |_, p| ly.push(p.clone()));
        lx.len() == ly.len() && lx.iter().zip(&ly).all(|(p, q)| p.bits_eq(q))
    })
}

fn chain_prefix_ok(result: &CascadeResult) -> bool {
    result.steps.windows(2).all(|w| {
        let (parent, child) = (&w[0], &w[1]);
        child.num_layers + 1 == parent.num_layers
            && prefix_blocks_equal(&child.initial, &parent.model, child.num_layers)
    })
}

fn surgery() -> Line {
    let mut notes = Vec::new();
    let mut ok = true;
    for per_layer in [false, true] {
        let m = ViTModel::build(mini_config(per_layer, 5)).unwrap();
        let id = init_student_from_teacher(&m, &BlockSelection::prefix(12).unwrap()).unwrap();
        let identity = id == m && id.weights.bits_eq(&m.weights);
        let mut strip_ok = true;
        let mut cur = m.clone();
        for depth in (1..12).rev() {
            let stripped = strip_last_block(&cur).unwrap();
            let prefix = init_student_from_teacher(&m, &BlockSelection::prefix(depth).unwrap()).unwrap();
            strip_ok &= stripped.weights.bits_eq(&prefix.weights) && stripped.config == prefix.config;
            cur = stripped;
        }
        ok &= identity && strip_ok;
        notes.push(format!("per_layer_heads={per_layer}: identity {identity}, strip==prefix at depths 11..1 {strip_ok}"));
    }
    // a short trained cascade, one epoch per depth on the small model
    let (tr, te) = fixtures::tiny_split(6);
    let teacher = ViTModel::build(fixtures::tiny_config(true)).unwrap();
    let cfg = TrainConfig { eval_every: 0, ..fixtures::tiny_cfg(Regime::CascadeStep, 1) };
    let result = cascade_distill(&teacher, &tr, &te, &cfg, &LossSpec::default(), None).unwrap();
    let chain = chain_prefix_ok(&result) && result.steps.len() == 3;
    ok &= chain;
    notes.push(format!("trained cascade chain prefix-equal at every depth {chain}"));
    line(ok, notes.join("; "))
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| { let v: f32 = StandardNormal.sample(rng); 3.0 * v }).collect::<Vec<f32>>(), shape).unwrap()
}

fn loss_identities() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (b, k) = (6, 8);
    let z = randn(&mut rng, &[b, k]);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
    let mut onehot = vec![0.0; b * k];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * k + y] = 1.0;
    }
    let onehot = Tensor::new(onehot, &[b, k]).unwrap();
    let hard = cross_entropy(&z, Target::Hard(&labels), 1.0).unwrap().item().unwrap();
    let soft = cross_entropy(&z, Target::Soft(&onehot), 1.0).unwrap().item().unwrap();
    let d_ce = (hard - soft).abs();

    let p = ops::softmax(&randn(&mut rng, &[b, k]), 1.0).unwrap();
    let d_kl = kl_divergence(&p, &p).unwrap().item().unwrap().abs();

    let layers = 4;
    let per_layer = vec![z.clone(); layers];
    let active: BTreeSet<usize> = (0..layers).collect();
    let probs = fcvitprobs_loss(&per_layer, &labels, &active).unwrap().total.item().unwrap();
    let d_probs = (probs - hard).abs();

    let tiny = fixtures::tiny_config(true);
    let student = ViTModel::build(ViTConfig { seed: 1, ..tiny.clone() }).unwrap();
    let teacher = ViTModel::build(ViTConfig { seed: 2, ..tiny.clone() }).unwrap();
    let x = random_images(&mut rng, b, &tiny).unwrap();
    let s_out = student.forward_eval(&x).unwrap();
    let t_out = teacher.forward_eval(&x).unwrap();
    let spec = LossSpec { w_task: 1.0, w_distil_ce: 0.5, w_cosine: 0.3, w_mse: 0.2, w_kl: 0.0, temperature: 2.0 };
    let br = skin_distil_loss(&s_out, &t_out, &labels, &spec, None).unwrap();
    let c = br.components;
    let mut sum = spec.w_task * c.task;
    sum += spec.w_distil_ce * c.distil_ce;
    sum += spec.w_cosine * c.cosine;
    sum += spec.w_mse * c.mse;
    let total = br.total.item().unwrap();
    let exact = total.to_bits() == sum.to_bits();
    let comps_ok = [c.task, c.distil_ce, c.cosine, c.mse].iter().all(|v| *v >= 0.0);

    line(
        d_ce <= LOSS_IDENTITY_TOL && d_kl <= LOSS_IDENTITY_TOL && d_probs <= LOSS_IDENTITY_TOL && exact && comps_ok,
        format!(
            "|CE(one-hot)-CE(hard)|={d_ce:.1e}, |KL(p,p)|={d_kl:.1e}, |fcvitprobs-CE(top)|={d_probs:.1e} (bound {LOSS_IDENTITY_TOL:.0e}); skin_distil total {total} == weighted sum {sum} exactly: {exact}"
        ),
    )
}

fn convergence(report: &MetricsReport) -> Line {
    line(
        report.accuracy >= MIN_ACCURACY && report.bma >= MIN_BMA,
        format!(
            "final model test accuracy {:.4} (>= {MIN_ACCURACY}), BMA {:.4} (>= {MIN_BMA})",
            report.accuracy, report.bma
        ),
    )
}

fn distil_student(teacher: &ViTModel, tr: &[Sample], te: &[Sample], seed: u64, guided: bool) -> (ViTModel, MetricsReport) {
    let student = init_student_from_teacher(teacher, &BlockSelection::every_other()).unwrap();
    let regime = if guided { Regime::SkinDistil } else { Regime::Plain };
    let cfg = TrainConfig { eval_every: 0, ..desk_cfg(regime, seed) };
    let out = train(student, guided.then_some(teacher), tr, te, &cfg, &LossSpec::default()).unwrap();
    let report = evaluate(&out.model, te, cfg.eval_batch_size).unwrap();
    (out.model, report)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn files_equal(a: &Path, b: &Path) -> bool {
    matches!((fs::read(a), fs::read(b)), (Ok(x), Ok(y)) if x == y)
}

/// History CSV with the wall-clock column dropped.
fn untimed(path: &Path) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    Some(
        text.lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
            .collect::<Vec<_>>()
            .join("\n"),
    )
}

struct Brute {
    bma: f64,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    binary: [f64; 4],
}

/// Metrics straight from `(pred, label)` pairs, without a confusion matrix.
fn brute_force(preds: &[usize], labels: &[usize], k: usize, malignant: &[usize]) -> Brute {
    let n = labels.len() as f64;
    let (mut bma_sum, mut bma_n) = (0.0, 0.0);
    let (mut p_w, mut r_w, mut f_w) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let support = labels.iter().filter(|&&y| y == c).count() as f64;
        let predicted = preds.iter().filter(|&&p| p == c).count() as f64;
        let tp = preds.iter().zip(labels).filter(|(&p, &y)| p == c && y == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        if support > 0.0 {
            bma_sum += recall;
            bma_n += 1.0;
        }
        p_w += support / n * precision;
        r_w += support / n * recall;
        f_w += support / n * f1;
    }
    let m = |c: usize| malignant.contains(&c);
    let count = |f: &dyn Fn(bool, bool) -> bool| preds.iter().zip(labels).filter(|(&p, &y)| f(m(y), m(p))).count() as f64;
    let tp = count(&|y, p| y && p);
    let fn_ = count(&|y, p| y && !p);
    let tn = count(&|y, p| !y && !p);
    let fp = count(&|y, p| !y && p);
    let div = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let (bp, br) = (div(tp, tp + fp), div(tp, tp + fn_));
    Brute {
        bma: bma_sum / bma_n,
        accuracy: preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / n,
        precision: p_w,
        recall: r_w,
        f1: f_w,
        binary: [div(tp + tn, n), bp, br, if bp + br > 0.0 { 2.0 * bp * br / (bp + br) } else { 0.0 }],
    }
}

fn metric_oracles() -> Line {
    let taxonomy = ClassTaxonomy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    let mut worst_recall_gap = 0.0f64;
    for _ in 0..METRIC_INSTANCES {
        let n = rng.random_range(1..=300);
        // skewed class frequencies, so some classes are rare or absent
        let weights: Vec<f64> = (0..8).map(|_| rng.random::<f64>().powi(3)).collect();
        let total: f64 = weights.iter().sum();
        let draw = |rng: &mut ChaCha8Rng| {
            let mut u = rng.random::<f64>() * total;
            for (c, w) in weights.iter().enumerate() {
                if u < *w {
                    return c;
                }
                u -= w;
            }
            7
        };
        let labels: Vec<usize> = (0..n).map(|_| draw(&mut rng)).collect();
        let preds: Vec<usize> = labels
            .iter()
            .map(|&y| if rng.random::<f64>() < 0.6 { y } else { rng.random_range(0..8) })
            .collect();
        let r = MetricsReport::from_predictions(&preds, &labels, &taxonomy).unwrap();
        let b = brute_force(&preds, &labels, 8, taxonomy.malignant());
        let diffs = [
            r.bma - b.bma,
            r.accuracy - b.accuracy,
            r.weighted.precision - b.precision,
            r.weighted.recall - b.recall,
            r.weighted.f1 - b.f1,
            r.binary.accuracy - b.binary[0],
            r.binary.precision - b.binary[1],
            r.binary.recall - b.binary[2],
            r.binary.f1 - b.binary[3],
        ];
        worst = diffs.iter().fold(worst, |m, d| m.max(d.abs()));
        worst_recall_gap = worst_recall_gap.max((r.weighted.recall - r.accuracy).abs());
    }
    line(
        worst <= METRIC_TOL && worst_recall_gap <= METRIC_TOL,
        format!(
            "{METRIC_INSTANCES} random 8-class instances: max deviation from brute force {worst:.1e}, max |weighted recall - accuracy| {worst_recall_gap:.1e} (bound {METRIC_TOL:.0e})"
        ),
    )
}

fn main() -> ExitCode {
    let mut all_passed = true;
    let scratch = tempfile::tempdir().unwrap();

    let t = Instant::now();
    all_passed &= report(1, t, param_anchor());
    let t = Instant::now();
    all_passed &= report(2, t, gradients());
    let t = Instant::now();
    all_passed &= report(3, t, surgery());
    let t = Instant::now();
    all_passed &= report(4, t, loss_identities());

    let t = Instant::now();
    let (tr, te) = desk_split();
    let run_a = scratch.path().join("run_a");
    let teacher = train_desk_teacher(&tr, &te, Some(run_a.clone()));
    let teacher_report = evaluate(&teacher.model, &te, 32).unwrap();
    all_passed &= report(5, t, convergence(&teacher_report));

    let t = Instant::now();
    let teacher_before = teacher.model.clone();
    let (student6, student_report) = distil_student(&teacher.model, &tr, &te, DESK_SEED, true);
    let retention = student_report.bma / teacher_report.bma;
    let untouched = teacher.model.weights.bits_eq(&teacher_before.weights);
    all_passed &= report(
        6,
        t,
        line(
            retention >= MIN_RETENTION && untouched,
            format!(
                "6-layer student BMA {:.4} / teacher BMA {:.4} = {:.2}% (>= {:.0}%); teacher unchanged {untouched}",
                student_report.bma,
                teacher_report.bma,
                retention * 100.0,
                MIN_RETENTION * 100.0
            ),
        ),
    );

    let t = Instant::now();
    let (mut guided, mut plain) = (Vec::new(), Vec::new());
    for seed in GUIDANCE_SEEDS {
        guided.push(distil_student(&teacher.model, &tr, &te, seed, true).1.bma);
        plain.push(distil_student(&teacher.model, &tr, &te, seed, false).1.bma);
    }
    let (g, p) = (mean(&guided), mean(&plain));
    all_passed &= report(
        7,
        t,
        line(
            g >= p - GUIDANCE_SLACK,
            format!("mean BMA over seeds {GUIDANCE_SEEDS:?}: teacher-guided {g:.4} {guided:.4?}, task-only {p:.4} {plain:.4?} (need guided >= task-only - {GUIDANCE_SLACK})"),
        ),
    );

    let t = Instant::now();
    let images: Vec<&[f32]> = te.iter().map(|s| s.image.as_slice()).collect();
    let mut rounds: Vec<(f64, f64)> = (0..BENCH_ROUNDS)
        .map(|_| {
            let b12 = bench_throughput(&teacher.model, &images, BENCH_BATCH, BENCH_WARMUP, BENCH_REPS, 1).unwrap();
            let b6 = bench_throughput(&student6, &images, BENCH_BATCH, BENCH_WARMUP, BENCH_REPS, 1).unwrap();
            (b6.items_per_second, b12.items_per_second)
        })
        .collect();
    rounds.sort_by(|a, b| (a.0 / a.1).total_cmp(&(b.0 / b.1)));
    let (ips6, ips12) = rounds[(BENCH_ROUNDS - 1) / 2];
    let speedup = ips6 / ips12;
    all_passed &= report(
        8,
        t,
        line(
            speedup >= MIN_SPEEDUP,
            format!(
                "median items/s: 6 layers {ips6:.1}, 12 layers {ips12:.1}, ratio {speedup:.3} (>= {MIN_SPEEDUP}; median of {BENCH_ROUNDS} back-to-back pairs), 1 thread, {BENCH_REPS} reps each"
            ),
        ),
    );

    let t = Instant::now();
    let fc_model = ViTModel::build(mini_config(true, DESK_SEED)).unwrap();
    let fc_cfg = TrainConfig { eval_every: 0, ..desk_cfg(Regime::Fcvit, DESK_SEED) };
    let fc = train(fc_model, None, &tr, &te, &fc_cfg, &LossSpec::default()).unwrap();
    let cascade_dir = scratch.path().join("cascade");
    let cascade_cfg = TrainConfig { eval_every: 0, ..desk_cfg(Regime::CascadeStep, DESK_SEED) };
    let result = cascade_distill(&fc.model, &tr, &te, &cascade_cfg, &LossSpec::default(), Some(&cascade_dir)).unwrap();
    let depths: Vec<usize> = result.steps.iter().map(|s| s.num_layers).collect();
    let checkpoints_ok = (1..=12).all(|d| {
        load_checkpoint(cascade_dir.join(format!("cascade_L{d}.sdvt")))
            .is_ok_and(|m| m.num_layers() == d && Some(&m) == result.step(d).map(|s| &s.model))
    });
    let counts: Vec<u64> = result.steps.iter().map(|s| s.param_count).collect();
    let decrements: BTreeSet<u64> = counts.windows(2).map(|w| w[0].saturating_sub(w[1])).collect();
    let decreasing = counts.windows(2).all(|w| w[1] < w[0]) && decrements.len() == 1;
    let csv = fs::read_to_string(cascade_dir.join("cascade.csv")).unwrap_or_default();
    let rows: Vec<&str> = csv.lines().collect();
    let csv_ok = rows.first() == Some(&"depth,params,bma,accuracy")
        && rows.len() == 13
        && rows[1..].iter().zip((1..=12).rev()).all(|(r, d)| r.split(',').count() == 4 && r.starts_with(&format!("{d},")));
    let acc = |d: usize| result.step(d).map_or(0.0, |s| s.report.accuracy);
    let ratio = acc(6) / acc(12);
    let chain = chain_prefix_ok(&result);
    all_passed &= report(
        9,
        t,
        line(
            depths == (1..=12).rev().collect::<Vec<_>>() && checkpoints_ok && decreasing && csv_ok && ratio >= MIN_DEPTH6_RATIO && chain,
            format!(
                "{} checkpoints reload {checkpoints_ok}; params {:?}..{:?} strictly decreasing by a constant {decreasing}; CSV shape {csv_ok}; chain prefix-equal {chain}; depth-6 accuracy {:.4} / depth-12 {:.4} = {ratio:.3} (>= {MIN_DEPTH6_RATIO})",
                depths.len(),
                counts.first(),
                counts.last(),
                acc(6),
                acc(12)
            ),
        ),
    );

    let t = Instant::now();
    all_passed &= report(10, t, metric_oracles());

    let t = Instant::now();
    let run_b = scratch.path().join("run_b");
    let rerun = train_desk_teacher(&tr, &te, Some(run_b.clone()));
    let same_final = files_equal(&run_a.join("final.sdvt"), &run_b.join("final.sdvt"));
    let same_best = files_equal(&run_a.join("best.sdvt"), &run_b.join("best.sdvt"));
    let ha = untimed(&run_a.join("history.csv"));
    let same_history = ha.is_some() && ha == untimed(&run_b.join("history.csv"));
    let same_memory = rerun.history.to_csv_untimed() == teacher.history.to_csv_untimed();
    all_passed &= report(
        11,
        t,
        line(
            same_final && same_best && same_history && same_memory,
            format!(
                "second identical run: final checkpoint bytes equal {same_final}, best checkpoint bytes equal {same_best}, history CSV equal except the seconds column {same_history}"
            ),
        ),
    );

    println!("acceptance: {}", if all_passed { "ALL PASS" } else { "SOME CRITERIA FAILED" });
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
