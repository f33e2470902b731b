use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Patch count `(T − P)/S + 1`; rejects `T < P` and partial tilings.
pub fn num_patches(steps: usize, patch_len: usize, stride: usize) -> Result<usize> {
    if patch_len == 0 || stride == 0 {
        return Err(Error::Shape(format!(
            "patch length {patch_len} and stride {stride} must be positive"
        )));
    }
    if steps < patch_len {
        return Err(Error::Shape(format!(
            "series of {steps} steps is shorter than the patch length {patch_len}"
        )));
    }
    if (steps - patch_len) % stride != 0 {
        return Err(Error::Shape(format!(
            "{steps} steps do not tile exactly into patches of {patch_len} with stride {stride}"
        )));
    }
    Ok((steps - patch_len) / stride + 1)
}

/// Splits every row of `series` (`[R, T]`) into `[R, N, P]` patches; patch
/// `j` covers steps `[j·S, j·S + P)`.
pub fn make_patches(series: &Tensor, patch_len: usize, stride: usize) -> Result<Tensor> {
    if series.rank() != 2 {
        return Err(Error::Shape(format!("make_patches expects [R, T], got {:?}", series.shape())));
    }
    let (r, t) = (series.shape()[0], series.shape()[1]);
    let n = num_patches(t, patch_len, stride)?;
    let mut out = Vec::with_capacity(r * n * patch_len);
    for row in series.data().chunks(t) {
        for j in 0..n {
            out.extend_from_slice(&row[j * stride..j * stride + patch_len]);
        }
    }
    Tensor::new(&[r, n, patch_len], out)
}
