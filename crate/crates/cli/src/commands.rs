//! One function per subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sdvt_core::data::{chw_to_rgb, load_image_dataset, stratified_split, synth_lesions, write_dataset, ClassTaxonomy, Sample};
use sdvt_core::distill::{cascade_distill, init_student_from_teacher, BlockSelection};
use sdvt_core::metrics::{
    bench_throughput, pca, tsne, write_attention_png, write_projection_csv, BenchReport, MetricsReport, TsneConfig,
};
use sdvt_core::train::{embeddings, evaluate, train, Regime, TrainOutput};
use sdvt_core::vit::{cls_attention_map, load_checkpoint, stack_images, ViTModel};

use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::UsageError;

/// Everything a subcommand needs.
pub struct Run {
    pub command: &'static str,
    pub argv: Vec<String>,
    pub out: PathBuf,
    pub threads: usize,
    pub settings: Settings,
}

impl Run {
    fn manifest(&self, outputs: Vec<PathBuf>) -> Result<()> {
        RunManifest::new(self.command, self.argv.clone(), self.settings.clone(), self.threads, outputs).write(&self.out)
    }

    fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.out.join(name)
    }
}

fn paths(names: &[&str]) -> Vec<PathBuf> {
    names.iter().map(PathBuf::from).collect()
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| UsageError(format!("--{flag} is required")).into())
}

fn single_model(s: &Settings) -> Result<&Path> {
    match s.model.as_slice() {
        [one] => Ok(one),
        [] => Err(UsageError("--model is required".into()).into()),
        _ => Err(UsageError("exactly one --model is expected".into()).into()),
    }
}

fn load(path: &Path) -> Result<ViTModel> {
    Ok(load_checkpoint(path)?)
}

fn samples(s: &Settings, size: usize) -> Result<Vec<Sample>> {
    let taxonomy = ClassTaxonomy::default();
    Ok(match &s.data {
        Some(dir) => {
            let labels = s.labels.clone().unwrap_or_else(|| dir.join("labels.csv"));
            load_image_dataset(dir, labels, &taxonomy, size)?
        }
        None => synth_lesions(s.synth_per_class, size, s.data_seed, s.imbalance.as_deref())?,
    })
}

fn split(s: &Settings, size: usize) -> Result<(Vec<Sample>, Vec<Sample>)> {
    Ok(stratified_split(&samples(s, size)?, s.split, s.data_seed, ClassTaxonomy::default().len())?)
}

/// The test split, or every sample with `--all`.
fn eval_set(s: &Settings, size: usize) -> Result<Vec<Sample>> {
    if s.all {
        samples(s, size)
    } else {
        Ok(split(s, size)?.1)
    }
}

fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    fs::write(path, report.to_csv()).with_context(|| format!("cannot write {}", path.display()))
}

fn summarize(report: &MetricsReport) {
    println!("accuracy {:.4}  bma {:.4}  weighted f1 {:.4}", report.accuracy, report.bma, report.weighted.f1);
}

pub fn synth(run: &Run) -> Result<()> {
    let s = &run.settings;
    let data = synth_lesions(s.synth_per_class, s.image_size, s.data_seed, s.imbalance.as_deref())?;
    let mut outputs = paths(&["labels.csv"]);
    outputs.extend(data.iter().map(|d| PathBuf::from(&d.source)));
    run.manifest(outputs)?;
    write_dataset(&data, &run.out, &ClassTaxonomy::default())?;
    println!("wrote {} images to {}", data.len(), run.out.display());
    Ok(())
}

const TRAIN_OUTPUTS: [&str; 4] = ["best.sdvt", "final.sdvt", "history.csv", "metrics.csv"];

fn finish_training(run: &Run, out: &TrainOutput, test: &[Sample]) -> Result<()> {
    let report = evaluate(&out.model, test, run.settings.eval_batch_size)?;
    write_metrics(&run.path("metrics.csv"), &report)?;
    if let Some(e) = out.best_epoch {
        println!("best epoch {e}");
    }
    print!("final model: ");
    summarize(&report);
    Ok(())
}

/// `train`, `fcvit` and `fcvitprobs`: a fresh or `--init` model under one regime.
pub fn train_regime(run: &Run) -> Result<()> {
    let s = &run.settings;
    let regime = s.regime;
    let teacher = if regime.needs_teacher() {
        Some(load(require(&s.teacher, "teacher")?)?)
    } else {
        if s.teacher.is_some() {
            bail!(UsageError(format!("--teacher is not used by the {regime:?} regime")));
        }
        None
    };
    let model = match &s.init {
        Some(p) => load(p)?,
        None => ViTModel::build(s.vit_config())?,
    };
    let cfg = s.train_config(regime, Some(run.out.clone()), None);
    cfg.validate()?;
    run.manifest(paths(&TRAIN_OUTPUTS))?;
    let (tr, te) = split(s, model.config.image_size)?;
    let out = train(model, teacher.as_ref(), &tr, &te, &cfg, &s.loss_spec())?;
    finish_training(run, &out, &te)
}

pub fn distil(run: &Run) -> Result<()> {
    let s = &run.settings;
    let teacher = load(require(&s.teacher, "teacher")?)?;
    let keep = BlockSelection::parse(&s.keep)?;
    let student = init_student_from_teacher(&teacher, &keep)?;
    let cfg = s.train_config(Regime::SkinDistil, Some(run.out.clone()), Some(keep.indices().to_vec()));
    cfg.validate()?;
    run.manifest(paths(&TRAIN_OUTPUTS))?;
    let (tr, te) = split(s, teacher.config.image_size)?;
    println!(
        "student keeps blocks {:?}: {} of {} layers, {} params",
        keep.indices(),
        student.num_layers(),
        teacher.num_layers(),
        student.param_count()
    );
    let out = train(student, Some(&teacher), &tr, &te, &cfg, &s.loss_spec())?;
    finish_training(run, &out, &te)
}

pub fn cascade(run: &Run) -> Result<()> {
    let s = &run.settings;
    let teacher = load(require(&s.teacher, "teacher")?)?;
    let cfg = s.train_config(Regime::CascadeStep, None, None);
    cfg.validate()?;
    let mut outputs = paths(&["cascade.csv"]);
    for d in (1..=teacher.num_layers()).rev() {
        outputs.push(format!("cascade_L{d}.sdvt").into());
        outputs.push(format!("cascade_L{d}_history.csv").into());
    }
    run.manifest(outputs)?;
    let (tr, te) = split(s, teacher.config.image_size)?;
    let result = cascade_distill(&teacher, &tr, &te, &cfg, &s.loss_spec(), Some(&run.out))?;
    for step in &result.steps {
        println!("depth {:2}: {} params, bma {:.4}", step.num_layers, step.param_count, step.report.bma);
    }
    Ok(())
}

pub fn eval(run: &Run) -> Result<()> {
    let s = &run.settings;
    let model = load(single_model(s)?)?;
    run.manifest(paths(&["metrics.csv"]))?;
    let set = eval_set(s, model.config.image_size)?;
    let report = evaluate(&model, &set, s.eval_batch_size)?;
    write_metrics(&run.path("metrics.csv"), &report)?;
    summarize(&report);
    Ok(())
}

pub fn bench(run: &Run) -> Result<()> {
    let s = &run.settings;
    let models = if s.model.is_empty() {
        vec![ViTModel::build(s.vit_config())?]
    } else {
        s.model.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?
    };
    if s.params_only {
        run.manifest(paths(&["params.csv"]))?;
        let mut csv = String::from("layers,params\n");
        for m in &models {
            csv.push_str(&format!("{},{}\n", m.num_layers(), m.param_count()));
            println!("{} layers: {} params", m.num_layers(), m.param_count());
        }
        let path = run.path("params.csv");
        return fs::write(&path, csv).with_context(|| format!("cannot write {}", path.display()));
    }
    run.manifest(paths(&["bench.csv"]))?;
    let mut csv = format!("{}\n", BenchReport::csv_header());
    for m in &models {
        let set = split(s, m.config.image_size)?.1;
        let images: Vec<&[f32]> = set.iter().map(|x| x.image.as_slice()).collect();
        let r = bench_throughput(m, &images, s.bench_batch, s.warmup, s.reps, run.threads)?;
        println!("{} layers: {:.1} items/s", m.num_layers(), r.items_per_second);
        csv.push_str(&r.csv_row(m.num_layers()));
        csv.push('\n');
    }
    let path = run.path("bench.csv");
    fs::write(&path, csv).with_context(|| format!("cannot write {}", path.display()))
}

pub fn export_attn(run: &Run) -> Result<()> {
    let s = &run.settings;
    let model = load(single_model(s)?)?;
    let c = &model.config;
    let layer = s.layer.unwrap_or(c.num_layers - 1);
    if layer >= c.num_layers {
        bail!(UsageError(format!("--layer {layer} is out of range for {} layers", c.num_layers)));
    }
    let set = eval_set(s, c.image_size)?;
    let chosen = &set[..s.count.min(set.len())];
    let stems: Vec<String> = chosen.iter().map(|x| x.source.trim_end_matches(".png").to_string()).collect();
    let mut outputs = Vec::new();
    for stem in &stems {
        outputs.push(PathBuf::from(format!("attention/{stem}.png")));
        outputs.push(PathBuf::from(format!("attention/{stem}_attn.png")));
    }
    run.manifest(outputs)?;
    let dir = run.path("attention");
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (sample, stem) in chosen.iter().zip(&stems) {
        let batch = stack_images(&[sample.image.as_slice()], c.channels, c.image_size)?;
        let out = model.forward_eval(&batch)?;
        let map = cls_attention_map(&out, layer, 0)?;
        let src = dir.join(format!("{stem}.png"));
        chw_to_rgb(&sample.image, sample.size)
            .save(&src)
            .with_context(|| format!("cannot write {}", src.display()))?;
        write_attention_png(dir.join(format!("{stem}_attn.png")), &map, c.grid(), c.image_size)?;
    }
    println!("wrote {} attention maps from block {layer}", chosen.len());
    Ok(())
}

pub fn export_embed(run: &Run) -> Result<()> {
    let s = &run.settings;
    let model = load(single_model(s)?)?;
    let file = match s.method.as_str() {
        "pca" | "tsne" => format!("embed_{}.csv", s.method),
        other => bail!(UsageError(format!("unknown projection method {other:?} (expected pca or tsne)"))),
    };
    run.manifest(vec![file.clone().into()])?;
    let set = eval_set(s, model.config.image_size)?;
    let points = embeddings(&model, &set, s.eval_batch_size)?;
    let dim = model.config.hidden_dim;
    let xy = if s.method == "pca" {
        pca(&points, dim)?
    } else {
        tsne(&points, dim, &TsneConfig { perplexity: s.perplexity, ..TsneConfig::default() }, s.seed)?
    };
    let labels: Vec<usize> = set.iter().map(|x| x.label).collect();
    write_projection_csv(run.path(&file), &xy, &labels)?;
    println!("wrote {} points to {file}", xy.len());
    Ok(())
}
