use std::fs;
use std::path::Path;

use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::taxonomy::ClassTaxonomy;
use crate::error::{Error, Result};

/// One RGB image, channel-major `[3, size, size]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Vec<f32>,
    pub size: usize,
    pub label: usize,
    pub source: String,
}

impl Sample {
    pub fn new(image: Vec<f32>, size: usize, label: usize, source: impl Into<String>) -> Result<Self> {
        if image.len() != 3 * size * size {
            return Err(Error::invalid(format!(
                "sample image has {} values, expected 3x{size}x{size}",
                image.len()
            )));
        }
        if let Some(v) = image.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Sample {
            image,
            size,
            label,
            source: source.into(),
        })
    }
}

/// Converts an 8-bit RGB image to channel-major floats in `[0, 1]`.
pub fn rgb_to_chw(img: &image::RgbImage) -> Vec<f32> {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut out = vec![0.0; 3 * w * h];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    out
}

/// Converts a channel-major `[3, size, size]` image to 8-bit RGB.
pub fn chw_to_rgb(image: &[f32], size: usize) -> image::RgbImage {
    image::RgbImage::from_fn(size as u32, size as u32, |x, y| {
        let at = |c: usize| {
            let v = image[(c * size + y as usize) * size + x as usize];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([at(0), at(1), at(2)])
    })
}

/// Reads `labels_csv` (header `filename,label_name`) and decodes every
/// listed image from `image_dir`, resized bilinearly to `image_size`.
/// Samples come back sorted by filename.
pub fn load_image_dataset(
    image_dir: impl AsRef<Path>,
    labels_csv: impl AsRef<Path>,
    taxonomy: &ClassTaxonomy,
    image_size: usize,
) -> Result<Vec<Sample>> {
    let (image_dir, labels_csv) = (image_dir.as_ref(), labels_csv.as_ref());
    let text = fs::read(labels_csv).map_err(|e| Error::io(labels_csv, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_slice());
    if !text.is_empty() {
        let headers = reader
            .headers()
            .map_err(|e| Error::Data(format!("{}: {e}", labels_csv.display())))?;
        if headers.iter().collect::<Vec<_>>() != ["filename", "label_name"] {
            return Err(Error::Data(format!(
                "{}: expected header `filename,label_name`, found {:?}",
                labels_csv.display(),
                headers
            )));
        }
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Data(format!("{} row {row}: {e}", labels_csv.display())))?;
        if record.len() != 2 {
            return Err(Error::Data(format!("{} row {row}: expected 2 fields", labels_csv.display())));
        }
        let (file, label_name) = (record[0].to_string(), record[1].trim().to_string());
        let label = taxonomy.index_of(&label_name).ok_or_else(|| {
            Error::Data(format!("{} row {row}: unknown label {label_name:?}", labels_csv.display()))
        })?;
        rows.push((file, label));
    }
    rows.sort();
    rows.into_iter()
        .map(|(file, label)| {
            let path = image_dir.join(&file);
            let img = image::open(&path)
                .map_err(|e| Error::Data(format!("cannot decode image {}: {e}", path.display())))?
                .to_rgb8();
            let img = if img.dimensions() == (image_size as u32, image_size as u32) {
                img
            } else {
                image::imageops::resize(&img, image_size as u32, image_size as u32, FilterType::Triangle)
            };
            Sample::new(rgb_to_chw(&img), image_size, label, file)
        })
        .collect()
}

/// Per-class shuffled split: `max(1, floor(n_c * train_fraction))` samples of
/// each class go to the training side, the rest to the test side.
pub fn stratified_split(
    samples: &[Sample],
    train_fraction: f64,
    seed: u64,
    num_classes: usize,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::invalid(format!("train fraction must be in (0, 1], got {train_fraction}")));
    }
    let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); num_classes];
    for s in samples {
        by_class
            .get_mut(s.label)
            .ok_or_else(|| Error::Data(format!("label {} out of range for {num_classes} classes", s.label)))?
            .push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Data(format!("class {class} has fewer than 2 samples")));
        }
        members.shuffle(&mut rng);
        let k = train_count(members.len(), train_fraction);
        train.extend(members[..k].iter().map(|s| (*s).clone()));
        test.extend(members[k..].iter().map(|s| (*s).clone()));
    }
    Ok((train, test))
}

/// Floor rule with a tolerance so that e.g. `10 * 0.8` is not floored to 7.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction + 1e-9).floor() as usize).clamp(1, n)
}
