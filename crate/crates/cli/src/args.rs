//! Command-line grammar.
//!
//! Every optional flag left unset is dropped before merging, so only flags
//! actually given override the config file and the defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Parser)]
#[command(name = "sdvt", version, about = "Train, distil, cascade and evaluate small vision transformers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic lesion dataset (PNG files plus labels.csv).
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Train a model under one objective.
    Train {
        #[command(flatten)]
        common: Common,
        /// plain, skin_distil, fcvit, fcvitprobs or cascade_step.
        #[arg(long)]
        regime: Option<String>,
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        loss: LossArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Build a student from selected teacher blocks and train it against the teacher.
    Distil {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: ModelPaths,
        /// Comma-separated teacher block indices to keep.
        #[arg(long)]
        keep: Option<String>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        loss: LossArgs,
    },
    /// Train a per-layer-head model with weighted CE over every head.
    Fcvit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train a per-layer-head model with the progressive head schedule.
    Fcvitprobs {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Distil a per-layer-head teacher down one block at a time to depth 1.
    Cascade {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        loss: LossArgs,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Measure inference throughput of checkpoints or of the configured model.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        bench: BenchArgs,
    },
    /// Write class-token attention maps next to the source images.
    ExportAttn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Project embeddings to 2-D with PCA or t-SNE.
    ExportEmbed {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Distil { .. } => "distil",
            Command::Fcvit { .. } => "fcvit",
            Command::Fcvitprobs { .. } => "fcvitprobs",
            Command::Cascade { .. } => "cascade",
            Command::Eval { .. } => "eval",
            Command::Bench { .. } => "bench",
            Command::ExportAttn { .. } => "export-attn",
            Command::ExportEmbed { .. } => "export-embed",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Train { common, .. }
            | Command::Distil { common, .. }
            | Command::Fcvit { common, .. }
            | Command::Fcvitprobs { common, .. }
            | Command::Cascade { common, .. }
            | Command::Eval { common, .. }
            | Command::Bench { common, .. }
            | Command::ExportAttn { common, .. }
            | Command::ExportEmbed { common, .. } => common,
        }
    }

    /// The flags given on the command line, keyed like the settings.
    pub fn flag_overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        match self {
            Command::Synth { synth, .. } => {
                put(&mut m, synth);
                rename(&mut m, "n_per_class", "synth_per_class");
                rename(&mut m, "size", "image_size");
                rename(&mut m, "seed", "data_seed");
            }
            Command::Train { regime, models, data, model, train, loss, schedule, .. } => {
                if let Some(r) = regime {
                    m.insert("regime".into(), Value::String(r.replace('-', "_")));
                }
                put(&mut m, models);
                put(&mut m, data);
                put(&mut m, model);
                put(&mut m, train);
                put(&mut m, loss);
                put(&mut m, schedule);
            }
            Command::Distil { models, keep, data, train, loss, .. } => {
                if let Some(k) = keep {
                    m.insert("keep".into(), Value::String(k.clone()));
                }
                put(&mut m, models);
                put(&mut m, data);
                put(&mut m, train);
                put(&mut m, loss);
            }
            Command::Fcvit { models, data, model, train, .. } => {
                put(&mut m, models);
                put(&mut m, data);
                put(&mut m, model);
                put(&mut m, train);
            }
            Command::Fcvitprobs { models, data, model, train, schedule, .. } => {
                put(&mut m, models);
                put(&mut m, data);
                put(&mut m, model);
                put(&mut m, train);
                put(&mut m, schedule);
            }
            Command::Cascade { models, data, train, loss, .. } => {
                put(&mut m, models);
                put(&mut m, data);
                put(&mut m, train);
                put(&mut m, loss);
            }
            Command::Eval { models, data, analysis, .. }
            | Command::ExportAttn { models, data, analysis, .. }
            | Command::ExportEmbed { models, data, analysis, .. } => {
                put(&mut m, models);
                put(&mut m, data);
                put(&mut m, analysis);
            }
            Command::Bench { models, data, model, bench, .. } => {
                put(&mut m, models);
                put(&mut m, data);
                put(&mut m, model);
                put(&mut m, bench);
            }
        }
        negate(&mut m, "no_augment", "augment");
        negate(&mut m, "no_cosine_decay", "cosine_decay");
        m
    }
}

/// Adds every field that was given: `None`, `false` and empty lists mean "not given".
fn put(map: &mut Map<String, Value>, group: &impl Serialize) {
    let Ok(Value::Object(fields)) = serde_json::to_value(group) else {
        unreachable!("flag groups serialize to objects")
    };
    for (k, v) in fields {
        let given = match &v {
            Value::Null | Value::Bool(false) => false,
            Value::Array(a) => !a.is_empty(),
            _ => true,
        };
        if given {
            map.insert(k, v);
        }
    }
}

fn rename(map: &mut Map<String, Value>, from: &str, to: &str) {
    if let Some(v) = map.remove(from) {
        map.insert(to.into(), v);
    }
}

fn negate(map: &mut Map<String, Value>, flag: &str, key: &str) {
    if map.remove(flag).is_some() {
        map.insert(key.into(), Value::Bool(false));
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run directory; every output goes here.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON settings file, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Thread count recorded in the manifest [env: SDVT_THREADS, default 1].
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated per-class count multipliers.
    #[arg(long, value_delimiter = ',')]
    pub imbalance: Vec<f32>,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelPaths {
    /// Teacher checkpoint.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Checkpoint to start from instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Checkpoint to evaluate, benchmark or export; repeatable for bench.
    #[arg(long)]
    pub model: Vec<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Directory of PNG images with a labels.csv; synthetic data otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Labels file, if not DATA/labels.csv.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub synth_per_class: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Training fraction of each class.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub imbalance: Vec<f32>,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Use the 224/16/768/12 geometry.
    #[arg(long)]
    pub paper_config: bool,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub mlp_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f32>,
    #[arg(long)]
    pub init_std: Option<f32>,
    #[arg(long)]
    pub per_layer_heads: bool,
    #[arg(long)]
    pub model_seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub weight_decay: Option<f32>,
    #[arg(long)]
    pub max_grad_norm: Option<f32>,
    #[arg(long)]
    pub no_cosine_decay: bool,
    /// Evaluate every N epochs; 0 disables evaluation.
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub eval_batch_size: Option<usize>,
    /// Seed of shuffling, augmentation and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_augment: bool,
    /// Class-balanced sampling.
    #[arg(long)]
    pub balance: bool,
    /// Comma-separated per-layer loss weights.
    #[arg(long, value_delimiter = ',')]
    pub layer_weights: Vec<f32>,
}

#[derive(Debug, Args, Serialize)]
pub struct LossArgs {
    #[arg(long)]
    pub w_task: Option<f32>,
    #[arg(long)]
    pub w_distil_ce: Option<f32>,
    #[arg(long)]
    pub w_cosine: Option<f32>,
    #[arg(long)]
    pub w_mse: Option<f32>,
    #[arg(long)]
    pub temperature: Option<f32>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScheduleArgs {
    /// Epochs of the top-head-only phase.
    #[arg(long)]
    pub m: Option<usize>,
    /// Epochs of each head-adding phase.
    #[arg(long)]
    pub n: Option<usize>,
    /// Epochs of the final full phase.
    #[arg(long)]
    pub p: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalysisArgs {
    /// Use every sample instead of the test split.
    #[arg(long)]
    pub all: bool,
    /// Block whose attention is exported; the last one by default.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Number of images to export attention maps for.
    #[arg(long)]
    pub count: Option<usize>,
    /// pca or tsne.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub bench_batch: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Report parameter counts without timing.
    #[arg(long)]
    pub params_only: bool,
}
