use std::time::Instant;

use serde::Serialize;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::vit::{stack_images, Mode, ViTModel};

/// Inference throughput of one model on pre-loaded samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    /// `samples / seconds` of the median repetition.
    pub items_per_second: f64,
    pub samples: usize,
    /// Wall time of the median repetition.
    pub seconds: f64,
    pub repetitions: usize,
    pub warmup_batches: usize,
    pub batch_size: usize,
    pub param_count: u64,
    pub threads: usize,
    /// Items per second of every repetition, in run order.
    pub per_rep: Vec<f64>,
}

impl BenchReport {
    pub fn csv_header() -> &'static str {
        "layers,params,samples,batch_size,threads,repetitions,seconds,items_per_second"
    }

    pub fn csv_row(&self, layers: usize) -> String {
        format!(
            "{layers},{},{},{},{},{},{},{}",
            self.param_count,
            self.samples,
            self.batch_size,
            self.threads,
            self.repetitions,
            self.seconds,
            self.items_per_second
        )
    }
}

/// Times eval-mode forward passes over `images` (each `[C, H, W]`).
///
/// Batches are assembled before timing, so only forward passes are in the
/// timed region. `warmup_batches` batches run first and are discarded; each
/// of the `reps` repetitions then covers every sample once. The reported
/// figures are those of the median repetition (lower median for even
/// counts). `threads` is recorded; the numeric core runs on one thread.
pub fn bench_throughput(
    model: &ViTModel,
    images: &[&[f32]],
    batch_size: usize,
    warmup_batches: usize,
    reps: usize,
    threads: usize,
) -> Result<BenchReport> {
    if images.is_empty() {
        return Err(Error::invalid("benchmark needs at least one sample"));
    }
    if batch_size == 0 || warmup_batches == 0 || reps == 0 {
        return Err(Error::invalid("batch_size, warmup and repetitions must all be >= 1"));
    }
    let c = &model.config;
    let batches = images
        .chunks(batch_size)
        .map(|chunk| stack_images(chunk, c.channels, c.image_size))
        .collect::<Result<Vec<Tensor>>>()?;
    let bound = model.bind_frozen()?;
    for b in batches.iter().cycle().take(warmup_batches) {
        model.forward(&bound, b, Mode::Eval)?;
    }
    let mut runs = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        for b in &batches {
            std::hint::black_box(model.forward(&bound, b, Mode::Eval)?);
        }
        runs.push(start.elapsed().as_secs_f64());
    }
    let per_rep: Vec<f64> = runs.iter().map(|s| images.len() as f64 / s).collect();
    let mut sorted = runs.clone();
    sorted.sort_by(f64::total_cmp);
    let seconds = sorted[(reps - 1) / 2];
    Ok(BenchReport {
        items_per_second: images.len() as f64 / seconds,
        samples: images.len(),
        seconds,
        repetitions: reps,
        warmup_batches,
        batch_size,
        param_count: model.param_count(),
        threads,
        per_rep,
    })
}
