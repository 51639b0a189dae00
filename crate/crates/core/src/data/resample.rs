//! Separable bicubic resampling (Catmull-Rom, `a = -0.5`).
//!
//! Sample centres sit at half-pixel positions, so resizing `n -> n` is the
//! identity. Taps outside the image repeat the nearest edge pixel. There is
//! no antialias prefilter when shrinking.

use lshr_tensor::{Real, Tensor};

use crate::error::{LshrError, Result};

const A: f64 = -0.5;

/// The cubic convolution kernel.
pub fn cubic_weight(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per output index: four `(source index, weight)` taps, edges clamped.
fn taps(n_in: usize, n_out: usize) -> Vec<[(usize, f64); 4]> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut row = [(0usize, 0.0); 4];
            for (j, tap) in row.iter_mut().enumerate() {
                let offset = j as f64 - 1.0;
                let idx = (base + offset).clamp(0.0, (n_in - 1) as f64) as usize;
                *tap = (idx, cubic_weight(offset - frac));
            }
            row
        })
        .collect()
}

/// Resizes every `[H, W]` plane of a `[B, C, H, W]` tensor. Values are not
/// clamped; see [`downscale`] for the pipeline operator.
pub fn bicubic_resize<T: Real>(image: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = image.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(LshrError::Dimension(format!("resize target {out_h}x{out_w} is empty")));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(image.clone());
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = Vec::with_capacity(b * c * out_h * out_w);
    let mut rows = vec![0.0f64; out_h * w];
    for plane in image.data().chunks(h * w) {
        // vertical pass, then horizontal
        for (oy, t) in ty.iter().enumerate() {
            for x in 0..w {
                rows[oy * w + x] = t.iter().map(|&(y, wt)| wt * plane[y * w + x].as_f64()).sum();
            }
        }
        for oy in 0..out_h {
            let row = &rows[oy * w..(oy + 1) * w];
            for t in &tx {
                let v: f64 = t.iter().map(|&(x, wt)| wt * row[x]).sum();
                out.push(T::from_f64_lossy(v));
            }
        }
    }
    Ok(Tensor::new([b, c, out_h, out_w], out)?)
}

/// Shrinks by an integer factor and clamps to `[0, 1]`: the simulated
/// low-resolution acquisition and the low-scale ground truth.
pub fn downscale<T: Real>(image: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [_, _, h, w] = image.dims4()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(LshrError::Dimension(format!(
            "{h}x{w} image is not divisible by the downscale factor {factor}"
        )));
    }
    Ok(clamp_unit(&bicubic_resize(image, h / factor, w / factor)?))
}

/// Bicubic enlargement by an integer factor, clamped to `[0, 1]`.
pub fn upscale<T: Real>(image: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [_, _, h, w] = image.dims4()?;
    if factor == 0 {
        return Err(LshrError::Dimension("upscale factor must be >= 1".into()));
    }
    Ok(clamp_unit(&bicubic_resize(image, h * factor, w * factor)?))
}

pub fn clamp_unit<T: Real>(image: &Tensor<T>) -> Tensor<T> {
    image.map(|v| v.max(T::zero()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_partition_of_unity() {
        for i in 0..=20 {
            let f = i as f64 / 20.0;
            let s: f64 = (-1..=2).map(|k| cubic_weight(k as f64 - f)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic_weight(0.0), 1.0);
        assert_eq!(cubic_weight(1.0), 0.0);
        assert_eq!(cubic_weight(0.5), 0.5625);
    }

    #[test]
    fn constants_and_identity() {
        let c = Tensor::<f64>::full([1, 1, 8, 6], 0.37);
        let r = bicubic_resize(&c, 3, 5).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
        let x = Tensor::<f64>::from_fn([2, 1, 5, 7], |i| (i as f64).sin());
        assert_eq!(bicubic_resize(&x, 5, 7).unwrap(), x);
    }

    #[test]
    fn halving_uses_symmetric_taps() {
        let x = Tensor::<f64>::from_fn([1, 1, 1, 8], |i| i as f64);
        let x = Tensor::new([1, 1, 2, 8], [x.data(), x.data()].concat()).unwrap();
        let r = bicubic_resize(&x, 1, 4).unwrap();
        // interior of a ramp is reproduced exactly (cubic convolution is exact on linears)
        assert!((r.data()[1] - 2.5).abs() < 1e-12);
        assert!((r.data()[2] - 4.5).abs() < 1e-12);
        // left edge clamps: taps at -1, 0 both read x[0]
        let want = -0.0625 * 0.0 + 0.5625 * 0.0 + 0.5625 * 1.0 - 0.0625 * 2.0;
        assert!((r.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn downscale_rejects_uneven() {
        assert!(downscale(&Tensor::<f32>::zeros([1, 1, 5, 4]), 2).is_err());
        let up = upscale(&Tensor::<f32>::full([1, 1, 2, 2], 2.0), 2).unwrap();
        assert!(up.data().iter().all(|&v| v == 1.0));
    }
}
