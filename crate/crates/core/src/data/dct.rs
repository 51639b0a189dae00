//! Orthonormal 2-D DCT-II and top-k coefficient sparsification.

use lshr_tensor::{Real, Tensor};

use crate::data::resample::clamp_unit;
use crate::error::{LshrError, Result};

/// Row `k` holds the `k`-th orthonormal DCT-II basis vector.
fn basis(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for k in 0..n {
        let alpha = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            c[k * n + i] = alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    c
}

/// `C_h X C_w^T` (forward) or `C_h^T X C_w` (inverse) on one plane.
fn transform_plane(x: &[f64], h: usize, w: usize, ch: &[f64], cw: &[f64], inverse: bool) -> Vec<f64> {
    let at = |c: &[f64], n: usize, r: usize, col: usize| if inverse { c[col * n + r] } else { c[r * n + col] };
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for col in 0..w {
            tmp[r * w + col] = (0..h).map(|i| at(ch, h, r, i) * x[i * w + col]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for col in 0..w {
            out[r * w + col] = (0..w).map(|j| tmp[r * w + j] * at(cw, w, col, j)).sum();
        }
    }
    out
}

fn map_planes<T: Real>(x: &Tensor<T>, mut f: impl FnMut(&[f64], usize, usize) -> Vec<f64>) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.dims4()?;
    let mut out = Vec::with_capacity(x.len());
    for plane in x.data().chunks(h * w) {
        let p: Vec<f64> = plane.iter().map(|v| v.as_f64()).collect();
        out.extend(f(&p, h, w).into_iter().map(T::from_f64_lossy));
    }
    Ok(Tensor::new(x.shape().to_vec(), out)?)
}

/// Orthonormal DCT-II of every `[H, W]` plane.
pub fn dct2<T: Real>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = image.dims4()?;
    let (ch, cw) = (basis(h), basis(w));
    map_planes(image, |p, h, w| transform_plane(p, h, w, &ch, &cw, false))
}

/// Inverse of [`dct2`].
pub fn idct2<T: Real>(coefficients: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = coefficients.dims4()?;
    let (ch, cw) = (basis(h), basis(w));
    map_planes(coefficients, |p, h, w| transform_plane(p, h, w, &ch, &cw, true))
}

/// Number of coefficients kept out of `n`: `ceil(keep * n)`, where a
/// product within 1e-9 of an integer counts as that integer.
pub fn kept_count(keep_fraction: f64, n: usize) -> usize {
    let x = keep_fraction * n as f64;
    let k = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
    (k as usize).clamp(1, n)
}

/// Keeps the largest-magnitude DCT coefficients of each plane, ties going
/// to the lower flat index, and transforms back. The result is clamped to
/// `[0, 1]`.
pub fn sparsify_dct<T: Real>(image: &Tensor<T>, keep_fraction: f64) -> Result<Tensor<T>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(LshrError::Config(format!("keep_fraction {keep_fraction} outside (0, 1]")));
    }
    let [_, _, h, w] = image.dims4()?;
    let (ch, cw) = (basis(h), basis(w));
    let keep = kept_count(keep_fraction, h * w);
    let out = map_planes(image, |p, h, w| {
        let mut coef = transform_plane(p, h, w, &ch, &cw, false);
        if keep < coef.len() {
            let mut order: Vec<usize> = (0..coef.len()).collect();
            order.sort_by(|&a, &b| coef[b].abs().total_cmp(&coef[a].abs()).then(a.cmp(&b)));
            for &i in &order[keep..] {
                coef[i] = 0.0;
            }
        }
        transform_plane(&coef, h, w, &ch, &cw, true)
    })?;
    Ok(clamp_unit(&out))
}
