//! Dense f32 tensors with reverse-mode differentiation, loss primitives and
//! the AdamW optimizer.

mod gradcheck;
pub mod loss;
pub mod ops;
pub mod optim;
mod tensor;

pub use gradcheck::{grad_check, grad_check_directional};
pub use loss::{cosine_distance_loss, cross_entropy, kl_divergence, mse_loss, LossSpec, Target};
pub use ops::softmax;
pub use optim::{adamw_step, AdamWConfig, OptimState, ParamUpdate};
pub use tensor::{numel, Tensor};
