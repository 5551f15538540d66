//! Student construction, distillation objectives, the progressive
//! per-layer-head schedule and the cascading driver.

mod cascade;
mod losses;
mod schedule;
mod surgery;

pub use cascade::{cascade_distill, write_cascade_csv, CascadeResult, CascadeStep};
pub use losses::{
    check_active_suffix, fcvit_loss, fcvitprobs_loss, skin_distil_loss, uniform_layer_weights, LossBreakdown,
    LossComponents,
};
pub use schedule::{build_fcvitprobs_schedule, phase_for_epoch, PhaseRecipe, ScheduleConfig, TrainPhase};
pub use surgery::{init_student_from_teacher, strip_last_block, BlockSelection};
