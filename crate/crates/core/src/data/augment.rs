use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitudes and probabilities of the training-time augmentations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig {
    /// Smallest retained side of the random crop, as a fraction of the image.
    pub crop_fraction: f32,
    pub crop_prob: f32,
    /// Largest translation as a fraction of the image side.
    pub max_shift: f32,
    /// Largest relative zoom in either direction.
    pub max_scale_delta: f32,
    /// Largest rotation in degrees.
    pub max_rotate: f32,
    pub affine_prob: f32,
    /// Largest additive per-channel shift.
    pub rgb_shift_max: f32,
    pub rgb_shift_prob: f32,
    /// Largest additive brightness change.
    pub brightness_delta: f32,
    pub brightness_prob: f32,
    /// Largest relative contrast change about the image mean.
    pub contrast_delta: f32,
    pub contrast_prob: f32,
}

impl Default for AugConfig {
    fn default() -> Self {
        AugConfig {
            crop_fraction: 0.875,
            crop_prob: 0.5,
            max_shift: 0.1,
            max_scale_delta: 0.1,
            max_rotate: 30.0,
            affine_prob: 0.5,
            rgb_shift_max: 0.08,
            rgb_shift_prob: 0.5,
            brightness_delta: 0.2,
            brightness_prob: 0.5,
            contrast_delta: 0.2,
            contrast_prob: 0.5,
        }
    }
}

impl AugConfig {
    /// Every augmentation switched off.
    pub fn none() -> Self {
        AugConfig {
            crop_prob: 0.0,
            affine_prob: 0.0,
            rgb_shift_prob: 0.0,
            brightness_prob: 0.0,
            contrast_prob: 0.0,
            ..AugConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.75..=1.0).contains(&self.crop_fraction) {
            return Err(Error::invalid(format!(
                "crop_fraction must be in [0.75, 1] so the lesion stays in view, got {}",
                self.crop_fraction
            )));
        }
        let probs = [
            ("crop_prob", self.crop_prob),
            ("affine_prob", self.affine_prob),
            ("rgb_shift_prob", self.rgb_shift_prob),
            ("brightness_prob", self.brightness_prob),
            ("contrast_prob", self.contrast_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        let magnitudes = [
            ("max_shift", self.max_shift),
            ("max_scale_delta", self.max_scale_delta),
            ("max_rotate", self.max_rotate),
            ("rgb_shift_max", self.rgb_shift_max),
            ("brightness_delta", self.brightness_delta),
            ("contrast_delta", self.contrast_delta),
        ];
        for (name, m) in magnitudes {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {m}")));
            }
        }
        if self.max_scale_delta >= 1.0 {
            return Err(Error::invalid("max_scale_delta must be < 1"));
        }
        Ok(())
    }
}

/// Independent stream for one sample in one epoch.
pub fn augment_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) ^ index as u64);
    rng
}

fn sym(rng: &mut impl Rng, m: f32) -> f32 {
    let m = if m.is_finite() { m.max(0.0) } else { 0.0 };
    rng.random_range(-m..=m)
}

fn chance(rng: &mut impl Rng, p: f32) -> bool {
    rng.random::<f32>() < p
}

/// Mirrors a coordinate into `[0, n - 1]` without repeating the edge pixel.
fn reflect(mut v: f32, n: usize) -> f32 {
    if n == 1 {
        return 0.0;
    }
    let last = (n - 1) as f32;
    let period = 2.0 * last;
    v = v.rem_euclid(period);
    if v > last {
        period - v
    } else {
        v
    }
}

/// Bilinear lookup in one `size × size` plane with reflected borders.
pub fn sample_bilinear_reflect(plane: &[f32], size: usize, x: f32, y: f32) -> f32 {
    let (x, y) = (reflect(x, size), reflect(y, size));
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(size - 1), (y0 + 1).min(size - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let at = |xx: usize, yy: usize| plane[yy * size + xx];
    let top = if fx == 0.0 { at(x0, y0) } else { at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx };
    let bottom = if fx == 0.0 { at(x0, y1) } else { at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx };
    if fy == 0.0 {
        top
    } else {
        top * (1.0 - fy) + bottom * fy
    }
}

/// Resamples every channel through `map`, which sends an output pixel
/// position to a source position.
fn remap(image: &[f32], size: usize, map: impl Fn(f32, f32) -> (f32, f32)) -> Vec<f32> {
    let plane = size * size;
    let mut out = vec![0.0; image.len()];
    for c in 0..image.len() / plane {
        let src = &image[c * plane..(c + 1) * plane];
        for y in 0..size {
            for x in 0..size {
                let (sx, sy) = map(x as f32, y as f32);
                out[c * plane + y * size + x] = sample_bilinear_reflect(src, size, sx, sy);
            }
        }
    }
    out
}

/// Adds `shift[c]` to channel `c`.
pub fn rgb_shift(image: &mut [f32], shift: [f32; 3]) {
    let plane = image.len() / 3;
    for (c, s) in shift.iter().enumerate() {
        for v in &mut image[c * plane..(c + 1) * plane] {
            *v += s;
        }
    }
}

/// Adds `delta` to every value.
pub fn adjust_brightness(image: &mut [f32], delta: f32) {
    for v in image {
        *v += delta;
    }
}

/// Scales deviations from the image mean by `1 + delta`.
pub fn adjust_contrast(image: &mut [f32], delta: f32) {
    let mean = image.iter().map(|&v| v as f64).sum::<f64>() as f32 / image.len().max(1) as f32;
    for v in image {
        *v = mean + (*v - mean) * (1.0 + delta);
    }
}

/// Applies the augmentation pipeline to a `[3, size, size]` image.
///
/// In order, each with its own probability: a random square crop whose side
/// is uniform in `[crop_fraction, 1]` of the image, resized back; a random
/// shift/zoom/rotation about the centre with reflected borders; a
/// per-channel additive shift; an additive brightness change; a contrast
/// change about the mean. The result is clamped to `[0, 1]`. Out-of-range
/// settings are clamped rather than rejected.
pub fn augment(image: &[f32], size: usize, cfg: &AugConfig, rng: &mut impl Rng) -> Vec<f32> {
    let mut img = image.to_vec();
    let n = size as f32;

    if chance(rng, cfg.crop_prob) {
        let frac = cfg.crop_fraction.clamp(0.75, 1.0);
        let side = rng.random_range(frac..=1.0) * n;
        let x0 = rng.random_range(0.0..=(n - side).max(0.0));
        let y0 = rng.random_range(0.0..=(n - side).max(0.0));
        let step = side / n;
        let offset = 0.5 * step - 0.5;
        img = remap(&img, size, |x, y| (x0 + x * step + offset, y0 + y * step + offset));
    }

    if chance(rng, cfg.affine_prob) {
        let dx = sym(rng, cfg.max_shift) * n;
        let dy = sym(rng, cfg.max_shift) * n;
        let zoom = 1.0 + sym(rng, cfg.max_scale_delta.min(0.9));
        let angle = sym(rng, cfg.max_rotate).to_radians();
        let (sin, cos) = angle.sin_cos();
        let centre = (n - 1.0) / 2.0;
        img = remap(&img, size, |x, y| {
            let (u, v) = ((x - centre - dx) / zoom, (y - centre - dy) / zoom);
            (cos * u + sin * v + centre, -sin * u + cos * v + centre)
        });
    }

    if chance(rng, cfg.rgb_shift_prob) {
        let shift = [sym(rng, cfg.rgb_shift_max), sym(rng, cfg.rgb_shift_max), sym(rng, cfg.rgb_shift_max)];
        rgb_shift(&mut img, shift);
    }
    if chance(rng, cfg.brightness_prob) {
        adjust_brightness(&mut img, sym(rng, cfg.brightness_delta));
    }
    if chance(rng, cfg.contrast_prob) {
        adjust_contrast(&mut img, sym(rng, cfg.contrast_delta));
    }
    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }
    img
}
