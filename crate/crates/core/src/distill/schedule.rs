use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::vit::ParamGroup;

/// Epoch counts of the progressive per-layer-head schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Epochs training only the final head.
    pub m: usize,
    /// Epochs after each additional head is switched on.
    pub n: usize,
    /// Final epochs with every parameter trainable.
    pub p: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { m: 2, n: 1, p: 5 }
    }
}

impl ScheduleConfig {
    pub fn total_epochs(&self, num_layers: usize) -> usize {
        self.m + self.n * num_layers.saturating_sub(1) + self.p
    }
}

/// One contiguous span of the schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPhase {
    pub epochs: Range<usize>,
    /// Heads contributing to the loss, always a contiguous run ending at the top.
    pub active_heads: BTreeSet<usize>,
    /// Parameter groups receiving updates; everything else stays frozen.
    pub trainable: BTreeSet<ParamGroup>,
    pub recipe: PhaseRecipe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseRecipe {
    /// Only the active heads learn, on top of a frozen backbone.
    HeadsOnly,
    /// The whole stack is fine-tuned.
    FullStack,
}

impl TrainPhase {
    pub fn contains_epoch(&self, epoch: usize) -> bool {
        self.epochs.contains(&epoch)
    }
}

/// Phase 0 trains head `L-1` for `m` epochs. Phase `p` (for `p` in `1..L`)
/// adds head `L-1-p` and trains the active heads for `n` epochs. The last
/// phase trains every parameter with every head active for `p` epochs.
/// Zero-length phases are kept so the phase list always has `L + 1` entries.
pub fn build_fcvitprobs_schedule(cfg: &ScheduleConfig, num_layers: usize) -> Vec<TrainPhase> {
    let top = num_layers.saturating_sub(1);
    let mut phases = Vec::with_capacity(num_layers + 1);
    let mut start = 0;
    let mut active = BTreeSet::from([top]);
    for p in 0..num_layers {
        if p > 0 {
            active.insert(top - p);
        }
        let len = if p == 0 { cfg.m } else { cfg.n };
        phases.push(TrainPhase {
            epochs: start..start + len,
            active_heads: active.clone(),
            trainable: active.iter().map(|&h| ParamGroup::Head(h)).collect(),
            recipe: PhaseRecipe::HeadsOnly,
        });
        start += len;
    }
    let mut everything: BTreeSet<ParamGroup> = (0..num_layers).flat_map(|i| [ParamGroup::Block(i), ParamGroup::Head(i)]).collect();
    everything.insert(ParamGroup::Embedding);
    everything.insert(ParamGroup::FinalNorm);
    phases.push(TrainPhase {
        epochs: start..start + cfg.p,
        active_heads: (0..num_layers).collect(),
        trainable: everything,
        recipe: PhaseRecipe::FullStack,
    });
    phases
}

/// The phase covering `epoch`, skipping zero-length phases.
pub fn phase_for_epoch(phases: &[TrainPhase], epoch: usize) -> Option<&TrainPhase> {
    phases.iter().find(|p| p.contains_epoch(epoch))
}
