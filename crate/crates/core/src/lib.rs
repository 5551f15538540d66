//! A small vision-transformer training and distillation engine.
//!
//! The crate carries its own reverse-mode autodiff core, the ViT model with
//! optional per-layer classification heads, student construction by block
//! selection and stripping, the distillation losses and schedules, data
//! loading and augmentation, and the evaluation suite.

pub mod autograd;
pub mod data;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
