//! Datasets, configs and training runs shared by the integration tests.

use std::path::PathBuf;

use sdvt_core::autograd::LossSpec;
use sdvt_core::data::{stratified_split, synth_lesions, Sample};
use sdvt_core::train::{train, Regime, TrainConfig, TrainOutput};
use sdvt_core::vit::{ViTConfig, ViTModel};

pub const DESK_SEED: u64 = 7;
pub const DESK_PER_CLASS: usize = 64;

/// 64 images per class at 32 px, split 80/20 per class, both seeded with 7.
pub fn desk_split() -> (Vec<Sample>, Vec<Sample>) {
    let samples = synth_lesions(DESK_PER_CLASS, 32, DESK_SEED, None).unwrap();
    stratified_split(&samples, 0.8, DESK_SEED, 8).unwrap()
}

pub fn mini_config(per_layer_heads: bool, seed: u64) -> ViTConfig {
    ViTConfig { per_layer_heads, seed, ..ViTConfig::mini() }
}

pub fn desk_cfg(regime: Regime, seed: u64) -> TrainConfig {
    TrainConfig { regime, seed, ..TrainConfig::desk() }
}

/// The 12-layer mini model trained for 10 epochs under the plain regime.
pub fn train_desk_teacher(train_set: &[Sample], test_set: &[Sample], checkpoint_dir: Option<PathBuf>) -> TrainOutput {
    let model = ViTModel::build(mini_config(false, DESK_SEED)).unwrap();
    let cfg = TrainConfig { checkpoint_dir, ..desk_cfg(Regime::Plain, DESK_SEED) };
    train(model, None, train_set, test_set, &cfg, &LossSpec::default()).unwrap()
}

/// A 3-layer, width-16 model on 16 px images, for fast structural tests.
pub fn tiny_config(per_layer_heads: bool) -> ViTConfig {
    ViTConfig {
        image_size: 16,
        patch_size: 8,
        channels: 3,
        hidden_dim: 16,
        num_layers: 3,
        num_heads: 2,
        mlp_dim: 32,
        num_classes: 8,
        dropout_prob: 0.0,
        per_layer_heads,
        seed: 11,
        init_std: 0.1,
    }
}

pub fn tiny_split(per_class: usize) -> (Vec<Sample>, Vec<Sample>) {
    let samples = synth_lesions(per_class, 16, 3, None).unwrap();
    stratified_split(&samples, 0.8, 3, 8).unwrap()
}

pub fn tiny_cfg(regime: Regime, epochs: usize) -> TrainConfig {
    TrainConfig { regime, epochs, batch_size: 8, eval_batch_size: 16, ..TrainConfig::desk() }
}
