//! The ViT classifier, its checkpoints and attention-map extraction.

mod attention_map;
pub mod checkpoint;
mod config;
mod model;
mod weights;

pub use attention_map::{cls_attention_map, upsample_nearest};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ViTConfig;
pub use model::{patchify, random_images, stack_images, unpatchify, ForwardOutput, Mode, ViTModel};
pub use weights::{BlockOf, LinearOf, NormOf, Param, ParamGroup, Weights};
