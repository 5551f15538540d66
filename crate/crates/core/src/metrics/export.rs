use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::vit::upsample_nearest;

/// Writes `x,y,label` rows.
pub fn write_projection_csv(path: impl AsRef<Path>, points: &[[f64; 2]], labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    if points.len() != labels.len() {
        return Err(Error::invalid(format!("{} points for {} labels", points.len(), labels.len())));
    }
    let mut out = String::from("x,y,label\n");
    for (p, l) in points.iter().zip(labels) {
        out.push_str(&format!("{},{},{l}\n", p[0], p[1]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a `grid × grid` map with values in `[0, 1]` as an 8-bit grayscale
/// PNG of `size × size` pixels, upsampled by nearest neighbour.
pub fn write_attention_png(path: impl AsRef<Path>, map: &[f32], grid: usize, size: usize) -> Result<()> {
    let path = path.as_ref();
    let up = upsample_nearest(map, grid, size)?;
    let pixels: Vec<u8> = up.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(size as u32, size as u32, pixels)
        .ok_or_else(|| Error::invalid("attention image buffer has the wrong size"))?;
    img.save(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}
