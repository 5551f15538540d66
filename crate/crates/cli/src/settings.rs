//! Resolved run settings.
//!
//! Every subcommand resolves one flat [`Settings`] value. Built-in defaults
//! come first, then the `--config` JSON file, then command-line flags. The
//! resolved value is stored in the run manifest, and a manifest can be fed
//! back through `--config` to replay a run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sdvt_core::autograd::{AdamWConfig, LossSpec};
use sdvt_core::data::AugConfig;
use sdvt_core::distill::ScheduleConfig;
use sdvt_core::train::{Regime, TrainConfig};
use sdvt_core::vit::ViTConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    // data
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub synth_per_class: usize,
    pub data_seed: u64,
    pub split: f64,
    pub imbalance: Option<Vec<f32>>,

    // model
    pub paper_config: bool,
    pub image_size: usize,
    pub patch_size: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub dropout: f32,
    pub init_std: f32,
    pub per_layer_heads: bool,
    pub model_seed: u64,

    // training
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub max_grad_norm: Option<f32>,
    pub cosine_decay: bool,
    pub eval_every: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    pub balance: bool,
    pub layer_weights: Option<Vec<f32>>,

    // losses and schedule
    pub w_task: f32,
    pub w_distil_ce: f32,
    pub w_cosine: f32,
    pub w_mse: f32,
    pub temperature: f32,
    pub m: usize,
    pub n: usize,
    pub p: usize,

    // models and surgery
    pub teacher: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub model: Vec<PathBuf>,
    pub keep: String,

    // analysis
    pub all: bool,
    pub bench_batch: usize,
    pub warmup: usize,
    pub reps: usize,
    pub params_only: bool,
    pub layer: Option<usize>,
    pub count: usize,
    pub method: String,
    pub perplexity: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let vit = ViTConfig::mini();
        let train = TrainConfig::desk();
        let loss = LossSpec::default();
        let schedule = ScheduleConfig::default();
        Settings {
            data: None,
            labels: None,
            synth_per_class: 64,
            data_seed: 7,
            split: 0.8,
            imbalance: None,
            paper_config: false,
            image_size: vit.image_size,
            patch_size: vit.patch_size,
            hidden_dim: vit.hidden_dim,
            layers: vit.num_layers,
            heads: vit.num_heads,
            mlp_dim: vit.mlp_dim,
            dropout: vit.dropout_prob,
            init_std: vit.init_std,
            per_layer_heads: false,
            model_seed: 0,
            regime: Regime::Plain,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.optimizer.learning_rate,
            weight_decay: train.optimizer.weight_decay,
            max_grad_norm: None,
            cosine_decay: train.cosine_decay,
            eval_every: train.eval_every,
            eval_batch_size: train.eval_batch_size,
            seed: 0,
            augment: true,
            balance: false,
            layer_weights: None,
            w_task: loss.w_task,
            w_distil_ce: loss.w_distil_ce,
            w_cosine: loss.w_cosine,
            w_mse: loss.w_mse,
            temperature: loss.temperature,
            m: schedule.m,
            n: schedule.n,
            p: schedule.p,
            teacher: None,
            init: None,
            model: Vec::new(),
            keep: "0,2,4,7,9,11".into(),
            all: false,
            bench_batch: 16,
            warmup: 2,
            reps: 5,
            params_only: false,
            layer: None,
            count: 8,
            method: "tsne".into(),
            perplexity: 30.0,
        }
    }
}

/// Geometry keys replaced by `--paper-config`.
fn paper_geometry(map: &mut Map<String, Value>) {
    let p = ViTConfig::paper();
    for (k, v) in [
        ("image_size", p.image_size),
        ("patch_size", p.patch_size),
        ("hidden_dim", p.hidden_dim),
        ("layers", p.num_layers),
        ("heads", p.num_heads),
        ("mlp_dim", p.mlp_dim),
    ] {
        map.insert(k.into(), v.into());
    }
    map.insert("init_std".into(), Value::from(p.init_std as f64));
}

fn normalize(map: Map<String, Value>) -> Map<String, Value> {
    map.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect()
}

/// Reads a config file: either a flat object of settings, or a run
/// manifest whose `settings` entry is used.
pub fn read_config(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("config {} is not valid JSON: {e}", path.display())))?;
    let map = match value {
        Value::Object(mut m) if m.contains_key("settings") && m.contains_key("tool") => match m.remove("settings") {
            Some(Value::Object(s)) => s,
            _ => return Err(UsageError(format!("manifest {} has no settings object", path.display())).into()),
        },
        Value::Object(m) => m,
        _ => return Err(UsageError(format!("config {} must be a JSON object", path.display())).into()),
    };
    Ok(map)
}

/// Defaults, overlaid by the config file, overlaid by flags.
pub fn resolve(config: Option<Map<String, Value>>, flags: Map<String, Value>) -> Result<Settings> {
    let Value::Object(mut merged) = serde_json::to_value(Settings::default())? else {
        unreachable!("settings serialize to an object")
    };
    let config = normalize(config.unwrap_or_default());
    let flags = normalize(flags);
    let paper = flags
        .get("paper_config")
        .or_else(|| config.get("paper_config"))
        .and_then(Value::as_bool)
        .unwrap_or(false);
    if paper {
        paper_geometry(&mut merged);
    }
    merged.extend(config);
    merged.extend(flags);
    serde_json::from_value(Value::Object(merged)).map_err(|e| UsageError(format!("invalid settings: {e}")).into())
}

impl Settings {
    pub fn vit_config(&self) -> ViTConfig {
        ViTConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            channels: 3,
            hidden_dim: self.hidden_dim,
            num_layers: self.layers,
            num_heads: self.heads,
            mlp_dim: self.mlp_dim,
            num_classes: 8,
            dropout_prob: self.dropout,
            per_layer_heads: self.per_layer_heads || self.regime.needs_per_layer_heads(),
            seed: self.model_seed,
            init_std: self.init_std,
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            w_task: self.w_task,
            w_distil_ce: self.w_distil_ce,
            w_cosine: self.w_cosine,
            w_mse: self.w_mse,
            w_kl: 0.0,
            temperature: self.temperature,
        }
    }

    pub fn train_config(&self, regime: Regime, checkpoint_dir: Option<PathBuf>, alignment: Option<Vec<usize>>) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            eval_every: self.eval_every,
            eval_batch_size: self.eval_batch_size,
            checkpoint_dir,
            optimizer: AdamWConfig {
                learning_rate: self.lr,
                weight_decay: self.weight_decay,
                max_grad_norm: self.max_grad_norm,
                ..AdamWConfig::default()
            },
            schedule: (regime == Regime::Fcvitprobs).then_some(ScheduleConfig { m: self.m, n: self.n, p: self.p }),
            regime,
            augment: if self.augment { AugConfig::default() } else { AugConfig::none() },
            layer_weights: self.layer_weights.clone(),
            alignment,
            balance: self.balance,
            cosine_decay: self.cosine_decay,
        }
    }
}
