//! Patch layout shared by the input embedding and the output head.
//!
//! Token `t` covers patch row `t / (W/p)`, patch column `t % (W/p)`. Inside a
//! token the values are ordered channel-major, then row, then column:
//! `k·p² + i·p + j`.

use numcore::{Scalar, Tensor};

use crate::error::{Error, Result};

fn check_grid(p: usize, h: usize, w: usize) -> Result<()> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Config(format!("grid {}x{} is not divisible by patch size {}", h, w, p)));
    }
    Ok(())
}

/// Source offset inside a `[K, H, W]` grid for every element of the
/// `[T, K·p²]` token matrix.
fn token_layout(k: usize, p: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (gr, gc) = (h / p, w / p);
    (0..gr * gc).flat_map(move |t| {
        let (pr, pc) = (t / gc, t % gc);
        (0..k).flat_map(move |ch| {
            (0..p).flat_map(move |i| (0..p).map(move |j| ch * h * w + (pr * p + i) * w + pc * p + j))
        })
    })
}

/// `[K, H, W]` → `[T, K·p²]`.
pub fn patchify<T: Scalar>(stacked: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    if stacked.rank() != 3 {
        return Err(Error::Config(format!("patchify needs [K, H, W], got {:?}", stacked.shape())));
    }
    let (k, h, w) = (stacked.shape()[0], stacked.shape()[1], stacked.shape()[2]);
    check_grid(p, h, w)?;
    let src = stacked.data();
    let data: Vec<T> = token_layout(k, p, h, w).map(|i| src[i]).collect();
    Ok(Tensor::new(&[(h / p) * (w / p), k * p * p], data)?)
}

/// `[T, K·p²]` → `[K, H, W]`, the exact inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(tokens: &Tensor<T>, p: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    check_grid(p, h, w)?;
    if tokens.rank() != 2 || tokens.shape()[0] != (h / p) * (w / p) || p == 0 || tokens.shape()[1] % (p * p) != 0 {
        return Err(Error::Config(format!(
            "tokens {:?} do not tile a {}x{} grid with patch {}",
            tokens.shape(),
            h,
            w,
            p
        )));
    }
    let k = tokens.shape()[1] / (p * p);
    let mut out = Tensor::zeros(&[k, h, w]);
    let dst = out.data_mut();
    for (&v, i) in tokens.data().iter().zip(token_layout(k, p, h, w)) {
        dst[i] = v;
    }
    Ok(out)
}

/// Gather index turning `batch` stacked token matrices `[batch·T, K·p²]` into
/// `[batch, K, H, W]`.
pub fn unpatchify_index(batch: usize, k: usize, p: usize, h: usize, w: usize) -> Vec<usize> {
    let per_sample = k * h * w;
    let mut index = vec![0usize; batch * per_sample];
    for b in 0..batch {
        for (src, dst) in token_layout(k, p, h, w).enumerate() {
            index[b * per_sample + dst] = b * per_sample + src;
        }
    }
    index
}
