use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::distill::LossComponents;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

pub const HISTORY_HEADER: &str =
    "epoch,loss_total,loss_task,loss_distil,loss_cosine,loss_mse,loss_kl,train_acc,eval_bma,eval_acc,seconds";

/// Summary of one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Sample-weighted mean of the batch totals.
    pub loss_total: f32,
    /// Sample-weighted means of the batch components.
    pub components: LossComponents,
    pub train_acc: f64,
    pub eval: Option<MetricsReport>,
    pub seconds: f64,
    /// Index of the schedule phase the epoch belonged to, for scheduled regimes.
    pub phase: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        let expected = self.records.len() + 1;
        if record.epoch != expected {
            return Err(Error::State(format!("history expected epoch {expected}, got {}", record.epoch)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn render(&self, with_time: bool) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            let c = &r.components;
            let (bma, acc) = match &r.eval {
                Some(m) => (m.bma.to_string(), m.accuracy.to_string()),
                None => (String::new(), String::new()),
            };
            let secs = if with_time { format!("{:.3}", r.seconds) } else { String::new() };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{bma},{acc},{secs}",
                r.epoch, r.loss_total, c.task, c.distil_ce, c.cosine, c.mse, c.kl, r.train_acc
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        self.render(true)
    }

    /// The CSV with the wall-clock column left empty, for run-to-run comparison.
    pub fn to_csv_untimed(&self) -> String {
        self.render(false)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Record with the highest eval BMA; the earliest wins ties.
    pub fn best(&self) -> Option<&EpochRecord> {
        let mut best: Option<&EpochRecord> = None;
        for r in &self.records {
            if let Some(m) = &r.eval {
                if best.is_none_or(|b| m.bma > b.eval.as_ref().map_or(f64::NEG_INFINITY, |e| e.bma)) {
                    best = Some(r);
                }
            }
        }
        best
    }
}
