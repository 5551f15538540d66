use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autograd::AdamWConfig;
use crate::data::AugConfig;
use crate::distill::ScheduleConfig;
use crate::error::{Error, Result};

/// Which objective the loop optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Task cross-entropy on the final head.
    Plain,
    /// Student objective against a frozen teacher.
    SkinDistil,
    /// Weighted cross-entropy over every per-layer head.
    Fcvit,
    /// Progressive per-layer-head training driven by a schedule.
    Fcvitprobs,
    /// One depth of the cascade: task CE plus CE against the teacher's final head.
    CascadeStep,
}

impl Regime {
    pub fn needs_teacher(self) -> bool {
        matches!(self, Regime::SkinDistil | Regime::CascadeStep)
    }

    pub fn needs_per_layer_heads(self) -> bool {
        matches!(self, Regime::Fcvit | Regime::Fcvitprobs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Ignored by the `fcvitprobs` regime, whose length comes from the schedule.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate every this many epochs (and always after the last); 0 disables evaluation.
    pub eval_every: usize,
    pub eval_batch_size: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub optimizer: AdamWConfig,
    pub schedule: Option<ScheduleConfig>,
    pub regime: Regime,
    pub augment: AugConfig,
    /// Per-layer weights for `fcvit`; uniform when absent.
    pub layer_weights: Option<Vec<f32>>,
    /// Teacher block paired with each student block by the cosine term.
    pub alignment: Option<Vec<usize>>,
    /// Inverse-frequency sampling instead of a plain shuffle.
    pub balance: bool,
    /// Cosine learning-rate decay to zero over the run.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            seed: 0,
            eval_every: 1,
            eval_batch_size: 64,
            checkpoint_dir: None,
            optimizer: AdamWConfig::default(),
            schedule: None,
            regime: Regime::Plain,
            augment: AugConfig::default(),
            layer_weights: None,
            alignment: None,
            balance: false,
            cosine_decay: false,
        }
    }
}

impl TrainConfig {
    /// Settings for the small desk-scale model.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            eval_batch_size: 32,
            optimizer: AdamWConfig::desk_scale(),
            cosine_decay: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size < 1 || self.eval_batch_size < 1 {
            return Err(Error::invalid("batch sizes must be >= 1"));
        }
        if self.regime == Regime::Fcvitprobs && self.schedule.is_none() {
            return Err(Error::invalid("the fcvitprobs regime needs a schedule"));
        }
        self.optimizer.validate()?;
        self.augment.validate()
    }

    /// Number of epochs actually run for a model of the given depth.
    pub fn total_epochs(&self, num_layers: usize) -> usize {
        match (self.regime, self.schedule) {
            (Regime::Fcvitprobs, Some(s)) => s.total_epochs(num_layers),
            _ => self.epochs,
        }
    }
}
