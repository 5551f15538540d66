use super::model::ForwardOutput;
use crate::error::{Error, Result};

/// Class-token attention over the patch grid for one sample at one layer.
///
/// Takes the class-token row of the attention matrix, drops the
/// class-to-class entry, averages over heads and min-max normalizes to
/// `[0, 1]`. A constant map comes out as all zeros. Returned row-major over
/// the `grid × grid` patch layout.
pub fn cls_attention_map(out: &ForwardOutput, layer: usize, sample: usize) -> Result<Vec<f32>> {
    let attn = out
        .attentions
        .get(layer)
        .ok_or_else(|| Error::invalid(format!("layer {layer} out of range ({} layers)", out.attentions.len())))?;
    let &[batch, heads, t, _] = attn.shape() else {
        return Err(Error::invalid("attention tensor must be rank 4"));
    };
    if sample >= batch {
        return Err(Error::invalid(format!("sample {sample} out of range (batch {batch})")));
    }
    let data = attn.data();
    let mut map = vec![0.0f32; t - 1];
    for h in 0..heads {
        let row = ((sample * heads + h) * t) * t;
        for (m, v) in map.iter_mut().zip(&data[row + 1..row + t]) {
            *m += v;
        }
    }
    for m in &mut map {
        *m /= heads as f32;
    }
    let lo = map.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = map.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    for m in &mut map {
        *m = if span > 0.0 { (*m - lo) / span } else { 0.0 };
    }
    Ok(map)
}

/// Nearest-neighbour upsampling of a square `grid × grid` map to `size × size`.
pub fn upsample_nearest(map: &[f32], grid: usize, size: usize) -> Result<Vec<f32>> {
    if grid == 0 || map.len() != grid * grid {
        return Err(Error::invalid(format!("map has {} values, not a {grid}x{grid} grid", map.len())));
    }
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let gy = y * grid / size;
        for x in 0..size {
            out.push(map[gy * grid + x * grid / size]);
        }
    }
    Ok(out)
}
