//! Convolution kernels on plain tensors.
//!
//! Both directions lower to im2col / col2im plus one GEMM per batch item.
//! Reductions over the batch (kernel and bias gradients) run in batch order,
//! so results are bit-stable for a given build.

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Stride and symmetric zero padding of a 2-d convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Unpadded convolution with the given stride.
    pub fn valid(stride: usize) -> Self {
        ConvSpec { stride, padding: 0 }
    }

    /// Stride 1 with `padding` on every side.
    pub fn same(padding: usize) -> Self {
        ConvSpec { stride: 1, padding }
    }
}

/// Output extent of a convolution along one axis, if the window fits.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Geometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

fn conv_geometry<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, spec: ConvSpec) -> Result<Geometry> {
    const OP: &str = "conv2d";
    if spec.stride == 0 {
        return Err(TensorError::argument(OP, "stride must be >= 1"));
    }
    let [batch, c_in, h, w] = x.dims4()?;
    let [c_out, kc, kh, kw] = kernel
        .dims4()
        .map_err(|_| TensorError::shape(OP, format!("kernel shape {:?} is not 4-d", kernel.shape())))?;
    if kc != c_in {
        return Err(TensorError::shape(
            OP,
            format!("input channel axis (1) is {c_in} but kernel axis 1 is {kc}"),
        ));
    }
    if kh != kw {
        return Err(TensorError::shape(OP, format!("kernel must be square, got {kh}x{kw}")));
    }
    let ho = conv_out_extent(h, kh, spec.stride, spec.padding).ok_or_else(|| {
        TensorError::shape(OP, format!("height axis (2): {h} (+2*{}) < kernel {kh}", spec.padding))
    })?;
    let wo = conv_out_extent(w, kw, spec.stride, spec.padding).ok_or_else(|| {
        TensorError::shape(OP, format!("width axis (3): {w} (+2*{}) < kernel {kw}", spec.padding))
    })?;
    Ok(Geometry {
        batch,
        c_in,
        c_out,
        h,
        w,
        k: kh,
        ho,
        wo,
    })
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(TensorError::shape(
                op,
                format!("bias shape {:?} does not match {channels} output channels", b.shape()),
            ));
        }
    }
    Ok(())
}

/// Unfolds `[c, h, w]` into `[c*k*k, ho*wo]` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    spec: ConvSpec,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let pad = spec.padding as isize;
    let stride = spec.stride as isize;
    let n = ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = oy as isize * stride + ky as isize - pad;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &img[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = ox as isize * stride + kx as isize - pad;
                        *out = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `img`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    spec: ConvSpec,
    ho: usize,
    wo: usize,
    img: &mut [T],
) {
    let pad = spec.padding as isize;
    let stride = spec.stride as isize;
    let n = ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = oy as isize * stride + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = ox as isize * stride + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            let dst = &mut img[base + ix as usize];
                            *dst = *dst + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T], spatial: usize) {
    for (chunk, &b) in out.chunks_mut(spatial).zip(bias.iter().cycle()) {
        for v in chunk {
            *v = *v + b;
        }
    }
}

fn accumulate_channel_sums<T: Real>(grad: &[T], channels: usize, spatial: usize, acc: &mut [T]) {
    for (i, chunk) in grad.chunks(spatial).enumerate() {
        let c = i % channels;
        acc[c] = chunk.iter().fold(acc[c], |s, &v| s + v);
    }
}

/// Cross-correlation of `x: [B, Cin, H, W]` with `kernel: [Cout, Cin, K, K]`.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = conv_geometry(x, kernel, spec)?;
    check_bias("conv2d", bias, g.c_out)?;
    let ckk = g.c_in * g.k * g.k;
    let n = g.ho * g.wo;
    let mut cols = vec![T::zero(); ckk * n];
    let mut out = vec![T::zero(); g.batch * g.c_out * n];
    let in_stride = g.c_in * g.h * g.w;
    for b in 0..g.batch {
        let img = &x.data()[b * in_stride..(b + 1) * in_stride];
        im2col(img, g.c_in, g.h, g.w, g.k, spec, g.ho, g.wo, &mut cols);
        let dst = &mut out[b * g.c_out * n..(b + 1) * g.c_out * n];
        T::gemm(
            g.c_out,
            ckk,
            n,
            T::one(),
            kernel.data(),
            (ckk, 1),
            &cols,
            (n, 1),
            T::zero(),
            dst,
            (n, 1),
        );
    }
    if let Some(bias) = bias {
        add_channel_bias(&mut out, bias.data(), n);
    }
    Tensor::new([g.batch, g.c_out, g.ho, g.wo], out)
}

/// Gradients of [`conv2d`] with respect to the requested operands.
pub struct ConvGrads<T: Real> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Backward pass of [`conv2d`]. `needs` selects `(input, kernel, bias)`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: ConvSpec,
    needs: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(x, kernel, spec)?;
    if grad_out.shape() != [g.batch, g.c_out, g.ho, g.wo] {
        return Err(TensorError::shape(
            "conv2d_backward",
            format!("upstream gradient shape {:?}", grad_out.shape()),
        ));
    }
    let ckk = g.c_in * g.k * g.k;
    let n = g.ho * g.wo;
    let in_stride = g.c_in * g.h * g.w;
    let out_stride = g.c_out * n;
    let mut cols = vec![T::zero(); ckk * n];
    let mut d_input = needs.0.then(|| vec![T::zero(); x.len()]);
    let mut d_kernel = needs.1.then(|| vec![T::zero(); kernel.len()]);
    let mut d_bias = needs.2.then(|| vec![T::zero(); g.c_out]);
    for b in 0..g.batch {
        let go = &grad_out.data()[b * out_stride..(b + 1) * out_stride];
        if let Some(dk) = d_kernel.as_mut() {
            let img = &x.data()[b * in_stride..(b + 1) * in_stride];
            im2col(img, g.c_in, g.h, g.w, g.k, spec, g.ho, g.wo, &mut cols);
            // dK[Cout, CKK] += dOut[Cout, N] * cols^T[N, CKK]
            T::gemm(g.c_out, n, ckk, T::one(), go, (n, 1), &cols, (1, n), T::one(), dk, (ckk, 1));
        }
        if let Some(dx) = d_input.as_mut() {
            // dCols[CKK, N] = K^T[CKK, Cout] * dOut[Cout, N]
            T::gemm(ckk, g.c_out, n, T::one(), kernel.data(), (1, ckk), go, (n, 1), T::zero(), &mut cols, (n, 1));
            let dst = &mut dx[b * in_stride..(b + 1) * in_stride];
            col2im(&cols, g.c_in, g.h, g.w, g.k, spec, g.ho, g.wo, dst);
        }
        if let Some(db) = d_bias.as_mut() {
            accumulate_channel_sums(go, g.c_out, n, db);
        }
    }
    Ok(ConvGrads {
        input: d_input.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
        kernel: d_kernel.map(|d| Tensor::new(kernel.shape().to_vec(), d)).transpose()?,
        bias: d_bias.map(|d| Tensor::new([g.c_out], d)).transpose()?,
    })
}

fn transposed_geometry<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, stride: usize) -> Result<Geometry> {
    const OP: &str = "transposed_conv2d";
    if stride == 0 {
        return Err(TensorError::argument(OP, "stride must be >= 1"));
    }
    let [batch, c_in, h, w] = x.dims4()?;
    let [kc, c_out, kh, kw] = kernel
        .dims4()
        .map_err(|_| TensorError::shape(OP, format!("kernel shape {:?} is not 4-d", kernel.shape())))?;
    if kc != c_in {
        return Err(TensorError::shape(
            OP,
            format!("input channel axis (1) is {c_in} but kernel axis 0 is {kc}"),
        ));
    }
    if kh != kw {
        return Err(TensorError::shape(OP, format!("kernel must be square, got {kh}x{kw}")));
    }
    // In im2col terms the transposed input is the "output" grid (ho, wo)
    // and the transposed output is the "input" image (h, w).
    Ok(Geometry {
        batch,
        c_in,
        c_out,
        h: (h - 1) * stride + kh,
        w: (w - 1) * stride + kw,
        k: kh,
        ho: h,
        wo: w,
    })
}

/// Transposed convolution of `x: [B, Cin, h, w]` with `kernel: [Cin, Cout, K, K]`.
///
/// Output is `[B, Cout, (h-1)*stride + K, (w-1)*stride + K]`. This is the
/// adjoint of an unpadded [`conv2d`] using the same kernel tensor.
pub fn transposed_conv2d<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let g = transposed_geometry(x, kernel, stride)?;
    check_bias("transposed_conv2d", bias, g.c_out)?;
    let spec = ConvSpec::valid(stride);
    let okk = g.c_out * g.k * g.k;
    let n = g.ho * g.wo;
    let in_stride = g.c_in * n;
    let out_stride = g.c_out * g.h * g.w;
    let mut cols = vec![T::zero(); okk * n];
    let mut out = vec![T::zero(); g.batch * out_stride];
    for b in 0..g.batch {
        let xb = &x.data()[b * in_stride..(b + 1) * in_stride];
        // cols[OKK, N] = K^T[OKK, Cin] * x[Cin, N]
        T::gemm(okk, g.c_in, n, T::one(), kernel.data(), (1, okk), xb, (n, 1), T::zero(), &mut cols, (n, 1));
        let dst = &mut out[b * out_stride..(b + 1) * out_stride];
        col2im(&cols, g.c_out, g.h, g.w, g.k, spec, g.ho, g.wo, dst);
    }
    if let Some(bias) = bias {
        add_channel_bias(&mut out, bias.data(), g.h * g.w);
    }
    Tensor::new([g.batch, g.c_out, g.h, g.w], out)
}

/// Backward pass of [`transposed_conv2d`]. `needs` selects `(input, kernel, bias)`.
pub fn transposed_conv2d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    needs: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let g = transposed_geometry(x, kernel, stride)?;
    if grad_out.shape() != [g.batch, g.c_out, g.h, g.w] {
        return Err(TensorError::shape(
            "transposed_conv2d_backward",
            format!("upstream gradient shape {:?}", grad_out.shape()),
        ));
    }
    let spec = ConvSpec::valid(stride);
    let okk = g.c_out * g.k * g.k;
    let n = g.ho * g.wo;
    let in_stride = g.c_in * n;
    let out_stride = g.c_out * g.h * g.w;
    let mut cols = vec![T::zero(); okk * n];
    let mut d_input = needs.0.then(|| vec![T::zero(); x.len()]);
    let mut d_kernel = needs.1.then(|| vec![T::zero(); kernel.len()]);
    let mut d_bias = needs.2.then(|| vec![T::zero(); g.c_out]);
    for b in 0..g.batch {
        let go = &grad_out.data()[b * out_stride..(b + 1) * out_stride];
        if d_input.is_some() || d_kernel.is_some() {
            im2col(go, g.c_out, g.h, g.w, g.k, spec, g.ho, g.wo, &mut cols);
        }
        if let Some(dx) = d_input.as_mut() {
            // dx[Cin, N] = K[Cin, OKK] * cols[OKK, N]
            let dst = &mut dx[b * in_stride..(b + 1) * in_stride];
            T::gemm(g.c_in, okk, n, T::one(), kernel.data(), (okk, 1), &cols, (n, 1), T::zero(), dst, (n, 1));
        }
        if let Some(dk) = d_kernel.as_mut() {
            // dK[Cin, OKK] += x[Cin, N] * cols^T[N, OKK]
            let xb = &x.data()[b * in_stride..(b + 1) * in_stride];
            T::gemm(g.c_in, n, okk, T::one(), xb, (n, 1), &cols, (1, n), T::one(), dk, (okk, 1));
        }
        if let Some(db) = d_bias.as_mut() {
            accumulate_channel_sums(go, g.c_out, g.h * g.w, db);
        }
    }
    Ok(ConvGrads {
        input: d_input.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
        kernel: d_kernel.map(|d| Tensor::new(kernel.shape().to_vec(), d)).transpose()?,
        bias: d_bias.map(|d| Tensor::new([g.c_out], d)).transpose()?,
    })
}

/// Moves `C*s*s` channels into an `s`-times larger spatial grid:
/// `out[b, c, y*s+i, x*s+j] = in[b, c*s*s + i*s + j, y, x]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    const OP: &str = "pixel_shuffle";
    if s == 0 {
        return Err(TensorError::argument(OP, "scale must be >= 1"));
    }
    let [b, cs, h, w] = x.dims4()?;
    if cs % (s * s) != 0 {
        return Err(TensorError::shape(
            OP,
            format!("channel axis (1) extent {cs} is not divisible by s^2 = {}", s * s),
        ));
    }
    let c = cs / (s * s);
    let (oh, ow) = (h * s, w * s);
    let src = x.data();
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let ic = ci * s * s + i * s + j;
                    for y in 0..h {
                        let row = ((bi * cs + ic) * h + y) * w;
                        let orow = ((bi * c + ci) * oh + y * s + i) * ow;
                        for xx in 0..w {
                            out[orow + xx * s + j] = src[row + xx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new([b, c, oh, ow], out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    const OP: &str = "pixel_unshuffle";
    if s == 0 {
        return Err(TensorError::argument(OP, "scale must be >= 1"));
    }
    let [b, c, oh, ow] = x.dims4()?;
    if oh % s != 0 || ow % s != 0 {
        return Err(TensorError::shape(
            OP,
            format!("spatial axes (2, 3) {oh}x{ow} are not divisible by {s}"),
        ));
    }
    let (h, w) = (oh / s, ow / s);
    let cs = c * s * s;
    let src = x.data();
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let ic = ci * s * s + i * s + j;
                    for y in 0..h {
                        let row = ((bi * cs + ic) * h + y) * w;
                        let orow = ((bi * c + ci) * oh + y * s + i) * ow;
                        for xx in 0..w {
                            out[row + xx] = src[orow + xx * s + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::new([b, cs, h, w], out)
}
