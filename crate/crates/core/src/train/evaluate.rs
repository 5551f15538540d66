use crate::data::{ClassTaxonomy, Sample};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::vit::{stack_images, ForwardOutput, ViTModel};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn check_samples(model: &ViTModel, samples: &[Sample], batch_size: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty sample set"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let c = &model.config;
    if let Some(s) = samples.iter().find(|s| s.size != c.image_size) {
        return Err(Error::invalid(format!(
            "sample {} is {}px, model expects {}px",
            s.source, s.size, c.image_size
        )));
    }
    if let Some(s) = samples.iter().find(|s| s.label >= c.num_classes) {
        return Err(Error::invalid(format!(
            "sample {} has label {} but the model has {} classes",
            s.source, s.label, c.num_classes
        )));
    }
    Ok(())
}

fn for_each_batch(
    model: &ViTModel,
    samples: &[Sample],
    batch_size: usize,
    mut f: impl FnMut(&ForwardOutput),
) -> Result<()> {
    check_samples(model, samples, batch_size)?;
    let c = &model.config;
    let bound = model.bind_frozen()?;
    for chunk in samples.chunks(batch_size) {
        let imgs: Vec<&[f32]> = chunk.iter().map(|s| s.image.as_slice()).collect();
        let x = stack_images(&imgs, c.channels, c.image_size)?;
        f(&model.forward(&bound, &x, crate::vit::Mode::Eval)?);
    }
    Ok(())
}

/// Final-head logits for every sample, `[n, classes]` row-major.
pub fn logits(model: &ViTModel, samples: &[Sample], batch_size: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(samples.len() * model.config.num_classes);
    for_each_batch(model, samples, batch_size, |o| out.extend_from_slice(o.final_logits.data()))?;
    Ok(out)
}

pub fn predict(model: &ViTModel, samples: &[Sample], batch_size: usize) -> Result<Vec<usize>> {
    let k = model.config.num_classes;
    Ok(logits(model, samples, batch_size)?.chunks(k).map(argmax).collect())
}

/// Final class-token embeddings, `[n, hidden]` row-major.
pub fn embeddings(model: &ViTModel, samples: &[Sample], batch_size: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(samples.len() * model.config.hidden_dim);
    for_each_batch(model, samples, batch_size, |o| out.extend_from_slice(o.embedding.data()))?;
    Ok(out)
}

/// Full pass in eval mode without augmentation.
pub fn evaluate(model: &ViTModel, samples: &[Sample], batch_size: usize) -> Result<MetricsReport> {
    let preds = predict(model, samples, batch_size)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    MetricsReport::from_predictions(&preds, &labels, &ClassTaxonomy::for_classes(model.config.num_classes))
}
