use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Non-overlapping tiling of a feature map into `I × J` flattened patches.
///
/// Each patch vector lists the patch rows, then columns, then channels
/// innermost, so it has length `patch_h · patch_w · C`. The grid itself is
/// stored as an `I × J × (patch_h · patch_w · C)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid<T = f32> {
    vectors: Tensor<T>,
    patch_h: usize,
    patch_w: usize,
    origin: [usize; 3],
}

impl<T: Scalar> PatchGrid<T> {
    pub fn vectors(&self) -> &Tensor<T> {
        &self.vectors
    }

    pub fn into_vectors(self) -> Tensor<T> {
        self.vectors
    }

    pub fn rows(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn patch_h(&self) -> usize {
        self.patch_h
    }

    pub fn patch_w(&self) -> usize {
        self.patch_w
    }

    /// Shape of the map the grid was cut from.
    pub fn origin_shape(&self) -> [usize; 3] {
        self.origin
    }

    pub fn patch(&self, i: usize, j: usize) -> &[T] {
        self.vectors.pixel(i, j)
    }

    /// Reassembles the original feature map.
    pub fn unflatten(&self) -> Tensor<T> {
        let [h, w, c] = self.origin;
        let mut out = Tensor::zeros(vec![h, w, c]);
        permute_patches(self.vectors.data(), out.data_mut(), self.origin, self.patch_h, self.patch_w, false);
        out
    }
}

/// Copies between the map layout and the patch-grid layout. `to_grid`
/// selects the direction; the index mapping is the same either way.
pub(crate) fn permute_patches<T: Copy>(
    src: &[T],
    dst: &mut [T],
    [h, w, c]: [usize; 3],
    ph: usize,
    pw: usize,
    to_grid: bool,
) {
    let cols = w / pw;
    let plen = ph * pw * c;
    for y in 0..h {
        let (i, py) = (y / ph, y % ph);
        for x in 0..w {
            let (j, px) = (x / pw, x % pw);
            let map_at = (y * w + x) * c;
            let grid_at = (i * cols + j) * plen + (py * pw + px) * c;
            if to_grid {
                dst[grid_at..grid_at + c].copy_from_slice(&src[map_at..map_at + c]);
            } else {
                dst[map_at..map_at + c].copy_from_slice(&src[grid_at..grid_at + c]);
            }
        }
    }
}

pub(crate) fn check_divisible(h: usize, w: usize, patch_h: usize, patch_w: usize) -> Result<()> {
    if patch_h == 0 || patch_w == 0 {
        return Err(Error::Config("patch extents must be positive".into()));
    }
    if !h.is_multiple_of(patch_h) || !w.is_multiple_of(patch_w) {
        return Err(Error::Config(format!(
            "a {h}×{w} map cannot be tiled by {patch_h}×{patch_w} patches; resize the input to a \
             multiple of the patch size or choose a patch size that divides it"
        )));
    }
    Ok(())
}

/// Splits an `H×W×C` map into `(H/patch_h) × (W/patch_w)` patches.
pub fn split_patches<T: Scalar>(x: &Tensor<T>, patch_h: usize, patch_w: usize) -> Result<PatchGrid<T>> {
    let (h, w, c) = x.dims3("split_patches")?;
    check_divisible(h, w, patch_h, patch_w)?;
    let mut vectors = Tensor::zeros(vec![h / patch_h, w / patch_w, patch_h * patch_w * c]);
    permute_patches(x.data(), vectors.data_mut(), [h, w, c], patch_h, patch_w, true);
    Ok(PatchGrid {
        vectors,
        patch_h,
        patch_w,
        origin: [h, w, c],
    })
}
