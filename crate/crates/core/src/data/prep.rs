//! Ground-truth preparation and label statistics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary mask from 8-bit grays: below 128 is background, 128 and above is
/// foreground.
pub fn threshold_mask(gray: &[u8]) -> Vec<u32> {
    gray.iter().map(|&v| u32::from(v >= 128)).collect()
}

/// Halves both extents by averaging each 2×2 block.
pub fn downscale_mean(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w, c) = image.dims3("downscale_mean")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape {
            op: "downscale_mean",
            shape: image.shape().to_vec(),
            reason: "extents must be even".into(),
        });
    }
    Ok(Tensor::from_fn(vec![h / 2, w / 2, c], |i| {
        let (r, col, ch) = (i / (w / 2 * c), i / c % (w / 2), i % c);
        let s = image.at3(2 * r, 2 * col, ch)
            + image.at3(2 * r, 2 * col + 1, ch)
            + image.at3(2 * r + 1, 2 * col, ch)
            + image.at3(2 * r + 1, 2 * col + 1, ch);
        s / 4.0
    }))
}

/// Halves both extents of an `h×w` label map by majority vote in each 2×2
/// block; ties go to the smallest label.
pub fn downscale_majority(mask: &[u32], h: usize, w: usize) -> Result<Vec<u32>> {
    if mask.len() != h * w {
        return Err(Error::dim("downscale_majority", "pixels", h * w, mask.len()));
    }
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(Error::Shape {
            op: "downscale_majority",
            shape: vec![h, w],
            reason: "extents must be even".into(),
        });
    }
    let mut out = Vec::with_capacity(h * w / 4);
    for r in (0..h).step_by(2) {
        for c in (0..w).step_by(2) {
            let mut block = [mask[r * w + c], mask[r * w + c + 1], mask[(r + 1) * w + c], mask[(r + 1) * w + c + 1]];
            block.sort_unstable();
            let mut best = (0, block[0]);
            let mut i = 0;
            while i < 4 {
                let j = block[i..].iter().take_while(|&&v| v == block[i]).count();
                if j > best.0 {
                    best = (j, block[i]);
                }
                i += j;
            }
            out.push(best.1);
        }
    }
    Ok(out)
}

/// Fraction of non-void pixels carrying each of `classes` labels.
pub fn class_frequencies(masks: &[&[u32]], classes: usize, void: Option<u32>) -> Result<Vec<f64>> {
    if masks.is_empty() {
        return Err(Error::Usage("class frequencies need at least one mask".into()));
    }
    let mut counts = vec![0u64; classes];
    for m in masks {
        for &l in m.iter() {
            if Some(l) == void {
                continue;
            }
            let slot = counts
                .get_mut(l as usize)
                .ok_or_else(|| Error::Usage(format!("label {l} out of range for {classes} classes")))?;
            *slot += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Usage("every pixel is void".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}
