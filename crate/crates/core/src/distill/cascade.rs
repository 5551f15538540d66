use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::surgery::strip_last_block;
use crate::autograd::LossSpec;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::train::{evaluate, train, History, Regime, TrainConfig};
use crate::vit::{save_checkpoint, ViTModel};

/// One depth of the cascade.
#[derive(Debug, Clone)]
pub struct CascadeStep {
    pub num_layers: usize,
    pub param_count: u64,
    /// Student before training at this depth.
    pub initial: ViTModel,
    /// Student after training; teacher of the next depth.
    pub model: ViTModel,
    pub report: MetricsReport,
    pub history: History,
}

/// Every depth from the full model down to one block.
#[derive(Debug, Clone, Default)]
pub struct CascadeResult {
    pub steps: Vec<CascadeStep>,
}

impl CascadeResult {
    pub fn step(&self, num_layers: usize) -> Option<&CascadeStep> {
        self.steps.iter().find(|s| s.num_layers == num_layers)
    }

    /// `depth,params,bma,accuracy`, deepest first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth,params,bma,accuracy\n");
        for s in &self.steps {
            let _ = writeln!(out, "{},{},{},{}", s.num_layers, s.param_count, s.report.bma, s.report.accuracy);
        }
        out
    }
}

pub fn write_cascade_csv(result: &CascadeResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, result.to_csv()).map_err(|e| Error::io(path, e))
}

/// Progressive distillation, one block at a time.
///
/// The first student has the teacher's depth and starts as a copy of it.
/// Every later student is the previous trained student minus its last block,
/// taught by that previous student. Each depth trains for `cfg.epochs`
/// epochs on task CE plus CE against the teacher's final head, using the
/// `w_task`, `w_distil_ce` and `temperature` of `spec`. With `out_dir`, each
/// trained model is saved as `cascade_L{depth}.sdvt` along with its history,
/// and `cascade.csv` is rewritten after every depth so a failure keeps the
/// finished depths on disk.
pub fn cascade_distill(
    full_teacher: &ViTModel,
    train_set: &[Sample],
    test_set: &[Sample],
    cfg: &TrainConfig,
    spec: &LossSpec,
    out_dir: Option<&Path>,
) -> Result<CascadeResult> {
    if !full_teacher.config.per_layer_heads {
        return Err(Error::invalid("the cascade teacher must have per-layer heads"));
    }
    let step_cfg = TrainConfig { regime: Regime::CascadeStep, checkpoint_dir: None, ..cfg.clone() };
    let step_spec = LossSpec { w_cosine: 0.0, w_mse: 0.0, w_kl: 0.0, ..*spec };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut result = CascadeResult::default();
    let mut teacher = full_teacher.clone();
    let mut student = full_teacher.clone();
    loop {
        let depth = student.num_layers();
        let initial = student.clone();
        let out = train(student, Some(&teacher), train_set, test_set, &step_cfg, &step_spec)?;
        let report = evaluate(&out.model, test_set, cfg.eval_batch_size)?;
        if let Some(dir) = out_dir {
            save_checkpoint(&out.model, dir.join(format!("cascade_L{depth}.sdvt")))?;
            out.history.write_csv(dir.join(format!("cascade_L{depth}_history.csv")))?;
        }
        result.steps.push(CascadeStep {
            num_layers: depth,
            param_count: out.model.param_count(),
            initial,
            model: out.model.clone(),
            report,
            history: out.history,
        });
        if let Some(dir) = out_dir {
            write_cascade_csv(&result, dir.join("cascade.csv"))?;
        }
        if depth == 1 {
            break;
        }
        student = strip_last_block(&out.model)?;
        teacher = out.model;
    }
    Ok(result)
}
