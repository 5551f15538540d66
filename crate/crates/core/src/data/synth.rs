//! Synthetic lesion-like images.
//!
//! Every image is a skin-toned background with one lesion near the centre.
//! Classes come in four colour families of two. Within a family the two
//! classes share colour, area and texture amplitude, so their colour
//! histograms nearly coincide; they differ in which axis the lesion is
//! elongated along (the streak texture follows that axis) and in outline
//! regularity, which only spatial features reveal.
//!
//! | class | family colour | outline | long axis | extra |
//! |---|---|---|---|---|
//! | 0 Melanoma | dark brown | irregular, lobed | horizontal | none |
//! | 1 Melanocytic nevus | dark brown | round | vertical | none |
//! | 2 Basal cell carcinoma | pink | round | horizontal | none |
//! | 3 Actinic keratosis | pink | irregular, lobed | vertical | none |
//! | 4 Benign keratosis | tan | irregular, lobed | horizontal | pale centre |
//! | 5 Dermatofibroma | tan | round | vertical | pale centre |
//! | 6 Vascular lesion | purple-red | round | horizontal | satellite dots |
//! | 7 Squamous cell carcinoma | purple-red | irregular, lobed | vertical | satellite dots |

use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{chw_to_rgb, Sample};
use super::taxonomy::ClassTaxonomy;
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Extra {
    None,
    PaleCentre,
    SatelliteDots,
}

struct Recipe {
    colour: [f32; 3],
    irregular: bool,
    horizontal: bool,
    extra: Extra,
}

const DARK_BROWN: [f32; 3] = [0.36, 0.22, 0.15];
const PINK: [f32; 3] = [0.86, 0.46, 0.52];
const TAN: [f32; 3] = [0.64, 0.47, 0.30];
const PURPLE_RED: [f32; 3] = [0.55, 0.14, 0.32];

const RECIPES: [Recipe; 8] = [
    Recipe { colour: DARK_BROWN, irregular: true, horizontal: true, extra: Extra::None },
    Recipe { colour: DARK_BROWN, irregular: false, horizontal: false, extra: Extra::None },
    Recipe { colour: PINK, irregular: false, horizontal: true, extra: Extra::None },
    Recipe { colour: PINK, irregular: true, horizontal: false, extra: Extra::None },
    Recipe { colour: TAN, irregular: true, horizontal: true, extra: Extra::PaleCentre },
    Recipe { colour: TAN, irregular: false, horizontal: false, extra: Extra::PaleCentre },
    Recipe { colour: PURPLE_RED, irregular: false, horizontal: true, extra: Extra::SatelliteDots },
    Recipe { colour: PURPLE_RED, irregular: true, horizontal: false, extra: Extra::SatelliteDots },
];

const SKIN: [f32; 3] = [0.86, 0.68, 0.58];
const STREAK_AMPLITUDE: f32 = 0.14;

/// Smooth 0→1 ramp over one pixel around `edge`.
fn coverage(distance_inside: f32) -> f32 {
    (distance_inside + 0.5).clamp(0.0, 1.0)
}

fn render(recipe: &Recipe, size: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = size as f32;
    let noise = Normal::new(0.0f32, 0.02).expect("valid std");
    let jitter = |rng: &mut ChaCha8Rng, base: [f32; 3], amount: f32| {
        let shared = rng.random_range(-amount..=amount);
        base.map(|c| c + shared + rng.random_range(-amount / 2.0..=amount / 2.0))
    };
    let skin = jitter(rng, SKIN, 0.05);
    let colour = jitter(rng, recipe.colour, 0.05);
    let cx = n / 2.0 + rng.random_range(-0.08..=0.08) * n;
    let cy = n / 2.0 + rng.random_range(-0.08..=0.08) * n;
    let radius = rng.random_range(0.22..=0.30) * n;
    let aspect = rng.random_range(2.0f32..=2.4).sqrt();
    let stretch = if recipe.horizontal { (aspect, 1.0 / aspect) } else { (1.0 / aspect, aspect) };
    let lobes = rng.random_range(3..=5) as f32;
    let lobe_phase = rng.random_range(0.0..2.0 * PI);
    let lobe_depth = if recipe.irregular { rng.random_range(0.2..=0.3) } else { 0.0 };
    let period = (n / 8.0).max(3.0);
    let streak_phase = rng.random_range(0.0..2.0 * PI);
    let dots: Vec<(f32, f32, f32)> = match recipe.extra {
        Extra::SatelliteDots => (0..rng.random_range(3..=5))
            .map(|_| {
                let a = rng.random_range(0.0..2.0 * PI);
                let d = radius * rng.random_range(1.25..=1.5);
                (cx + d * a.cos(), cy + d * a.sin(), rng.random_range(0.04..=0.06) * n)
            })
            .collect(),
        _ => Vec::new(),
    };
    let pale = matches!(recipe.extra, Extra::PaleCentre);

    let plane = size * size;
    let mut img = vec![0.0; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let (dx, dy) = ((px - cx) / stretch.0, (py - cy) / stretch.1);
            let r = (dx * dx + dy * dy).sqrt();
            let theta = dy.atan2(dx);
            let edge = radius * (1.0 + lobe_depth * (lobes * theta + lobe_phase).sin());
            let inside = coverage(edge - r);
            let along = if recipe.horizontal { py } else { px };
            let streak = STREAK_AMPLITUDE * (2.0 * PI * along / period + streak_phase).sin();
            let mut pale_mix = 0.0;
            if pale {
                pale_mix = 0.6 * coverage(0.35 * radius - r);
            }
            let dot = dots
                .iter()
                .map(|&(ox, oy, or)| coverage(or - ((px - ox).powi(2) + (py - oy).powi(2)).sqrt()))
                .fold(0.0f32, f32::max);
            for c in 0..3 {
                let lesion = colour[c] + streak;
                let lesion = lesion * (1.0 - pale_mix) + 0.95 * pale_mix;
                let mut v = skin[c] * (1.0 - inside) + lesion * inside;
                v = v * (1.0 - dot) + colour[c] * dot;
                img[c * plane + y * size + x] = (v + noise.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Generates `n_per_class` images per class (times the optional per-class
/// multiplier, at least one). Samples are ordered by class, then index, and
/// depend only on `seed`.
pub fn synth_lesions(n_per_class: usize, image_size: usize, seed: u64, imbalance: Option<&[f32]>) -> Result<Vec<Sample>> {
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be >= 1"));
    }
    if image_size < 8 {
        return Err(Error::invalid("synthetic images need at least 8 pixels per side"));
    }
    if let Some(m) = imbalance {
        if m.len() != RECIPES.len() || m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("imbalance needs 8 finite non-negative multipliers"));
        }
    }
    let mut out = Vec::new();
    for (class, recipe) in RECIPES.iter().enumerate() {
        let count = match imbalance {
            Some(m) => ((n_per_class as f32 * m[class]).round() as usize).max(1),
            None => n_per_class,
        };
        for i in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((class as u64) << 32) | i as u64);
            let image = render(recipe, image_size, &mut rng);
            out.push(Sample::new(image, image_size, class, format!("synth_c{class}_{i:05}.png"))?);
        }
    }
    Ok(out)
}

/// Writes samples as PNG files named by their source id plus `labels.csv`.
pub fn write_dataset(samples: &[Sample], dir: impl AsRef<Path>, taxonomy: &ClassTaxonomy) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", csv_path.display()));
    w.write_record(["filename", "label_name"]).map_err(csv_err)?;
    for s in samples {
        if s.label >= taxonomy.len() {
            return Err(Error::Data(format!("label {} has no class name", s.label)));
        }
        let path = dir.join(&s.source);
        chw_to_rgb(&s.image, s.size)
            .save(&path)
            .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
        w.write_record([s.source.as_str(), taxonomy.name(s.label)]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))
}
