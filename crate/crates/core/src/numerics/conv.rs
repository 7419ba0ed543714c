//! Same-padded 2-D convolution (with dilation) and the stride-2 up-convolution.
//!
//! Stride-1 convolutions run on padded planes (see `direct`); the rest lower
//! to column matrices in `f64` and reuse the kernels in [`super::gemm`].

use crate::error::{Error, Result};
use crate::numerics::direct;
use crate::numerics::gemm::{matmul_abt_acc, matmul_acc, transpose};
use crate::numerics::tensor::{Shape, Tensor4D};
use crate::scalar::Scalar;

/// Upper bound on column-matrix elements materialised at once.
const COLUMN_BUDGET: usize = 1 << 22;

/// Output size and zero padding of a "same" convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    /// Output is `ceil(input / stride)` per axis; padding is split with the
    /// smaller half on top/left.
    pub fn same(in_h: usize, in_w: usize, kh: usize, kw: usize, stride: usize, dilation: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Unsupported("convolution stride must be at least 1".into()));
        }
        if dilation == 0 {
            return Err(Error::Unsupported("convolution dilation must be at least 1".into()));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::Unsupported("convolution kernel must be non-empty".into()));
        }
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad = |out: usize, input: usize, k: usize| {
            let span = dilation * (k - 1) + 1;
            ((out.saturating_sub(1)) * stride + span).saturating_sub(input) / 2
        };
        Ok(ConvGeometry {
            kh,
            kw,
            stride,
            dilation,
            in_h,
            in_w,
            out_h,
            out_w,
            pad_top: pad(out_h, in_h, kh),
            pad_left: pad(out_w, in_w, kw),
        })
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Range of output positions whose input coordinate `o*stride + offset`
    /// lies inside `[0, len)`.
    #[inline]
    fn valid(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
        let s = stride as isize;
        let start = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
        let end = (in_len as isize - offset + s - 1).div_euclid(s);
        let end = end.clamp(0, out_len as isize) as usize;
        let start = (start as usize).min(end);
        (start, end)
    }
}

fn check_conv_args<T: Scalar>(input: &Tensor4D<T>, kernels: &Tensor4D<T>, bias: &[T]) -> Result<()> {
    let (xs, ks) = (input.shape(), kernels.shape());
    if xs.c != ks.c {
        return Err(Error::dim("input channels", ks.c, xs.c));
    }
    if bias.len() != ks.n {
        return Err(Error::dim("bias length", ks.n, bias.len()));
    }
    Ok(())
}

fn samples_per_chunk(k: usize, plane: usize) -> usize {
    (COLUMN_BUDGET / (k * plane).max(1)).max(1)
}

/// Lowers samples `n0..n1` to a `(c_in·kh·kw) × (count·out_plane)` matrix.
fn im2col<T: Scalar>(input: &Tensor4D<T>, g: &ConvGeometry, n0: usize, n1: usize) -> Vec<f64> {
    let xs = input.shape();
    let plane = g.out_plane();
    let np = (n1 - n0) * plane;
    let rows = xs.c * g.kh * g.kw;
    let mut cols = vec![0.0f64; rows * np];
    for ci in 0..xs.c {
        for ky in 0..g.kh {
            let dy = (ky * g.dilation) as isize - g.pad_top as isize;
            let (oy0, oy1) = ConvGeometry::valid(g.out_h, xs.h, g.stride, dy);
            for kx in 0..g.kw {
                let dx = (kx * g.dilation) as isize - g.pad_left as isize;
                let (ox0, ox1) = ConvGeometry::valid(g.out_w, xs.w, g.stride, dx);
                if ox0 >= ox1 || oy0 >= oy1 {
                    continue;
                }
                let row = (ci * g.kh + ky) * g.kw + kx;
                for (j, n) in (n0..n1).enumerate() {
                    let src = input.plane(n, ci);
                    let dst = &mut cols[row * np + j * plane..row * np + (j + 1) * plane];
                    for oy in oy0..oy1 {
                        let iy = (oy * g.stride) as isize + dy;
                        let src_row = &src[iy as usize * xs.w..(iy as usize + 1) * xs.w];
                        let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 {
                            let ix0 = (ox0 as isize + dx) as usize;
                            for (d, s) in dst_row[ox0..ox1].iter_mut().zip(&src_row[ix0..]) {
                                *d = s.widen();
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ((ox * g.stride) as isize + dx) as usize;
                                dst_row[ox] = src_row[ix].widen();
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto `grad` (samples `n0..`).
fn col2im(cols: &[f64], grad: &mut [f64], xs: Shape, g: &ConvGeometry, count: usize) {
    let plane = g.out_plane();
    let np = count * plane;
    let in_plane = xs.plane();
    for ci in 0..xs.c {
        for ky in 0..g.kh {
            let dy = (ky * g.dilation) as isize - g.pad_top as isize;
            let (oy0, oy1) = ConvGeometry::valid(g.out_h, xs.h, g.stride, dy);
            for kx in 0..g.kw {
                let dx = (kx * g.dilation) as isize - g.pad_left as isize;
                let (ox0, ox1) = ConvGeometry::valid(g.out_w, xs.w, g.stride, dx);
                if ox0 >= ox1 || oy0 >= oy1 {
                    continue;
                }
                let row = (ci * g.kh + ky) * g.kw + kx;
                for j in 0..count {
                    let src = &cols[row * np + j * plane..row * np + (j + 1) * plane];
                    let base = (j * xs.c + ci) * in_plane;
                    let dst = &mut grad[base..base + in_plane];
                    for oy in oy0..oy1 {
                        let iy = ((oy * g.stride) as isize + dy) as usize;
                        let dst_row = &mut dst[iy * xs.w..(iy + 1) * xs.w];
                        let src_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 {
                            let ix0 = (ox0 as isize + dx) as usize;
                            for (d, s) in dst_row[ix0..].iter_mut().zip(&src_row[ox0..ox1]) {
                                *d += s;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ((ox * g.stride) as isize + dx) as usize;
                                dst_row[ix] += src_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn widen_all<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.widen()).collect()
}

/// Same-padded cross-correlation.
///
/// `kernels` is `(c_out, c_in, kh, kw)`; taps are spaced `dilation` pixels apart.
pub fn conv2d<T: Scalar>(
    input: &Tensor4D<T>,
    kernels: &Tensor4D<T>,
    bias: &[T],
    stride: usize,
    dilation: usize,
) -> Result<Tensor4D<T>> {
    check_conv_args(input, kernels, bias)?;
    let (xs, ks) = (input.shape(), kernels.shape());
    let g = ConvGeometry::same(xs.h, xs.w, ks.h, ks.w, stride, dilation)?;
    if stride == 1 && !input.is_empty() {
        return Ok(direct::forward(input, kernels, bias, &g));
    }
    let out_shape = Shape::new(xs.n, ks.n, g.out_h, g.out_w);
    let mut out = Tensor4D::zeros(out_shape);
    let weights = widen_all(kernels.data());
    let k = ks.c * ks.h * ks.w;
    let plane = g.out_plane();
    let chunk = samples_per_chunk(k, plane);
    let mut n0 = 0;
    while n0 < xs.n {
        let n1 = (n0 + chunk).min(xs.n);
        let np = (n1 - n0) * plane;
        let cols = im2col(input, &g, n0, n1);
        let mut acc = vec![0.0f64; ks.n * np];
        for (co, row) in acc.chunks_mut(np).enumerate() {
            row.fill(bias[co].widen());
        }
        matmul_acc(&weights, &cols, &mut acc, ks.n, k, np);
        for (j, n) in (n0..n1).enumerate() {
            for co in 0..ks.n {
                let src = &acc[co * np + j * plane..co * np + (j + 1) * plane];
                for (d, &s) in out.plane_mut(n, co).iter_mut().zip(src) {
                    *d = T::narrow(s);
                }
            }
        }
        n0 = n1;
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its input, kernels and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor4D<T>,
    pub kernels: Tensor4D<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4D<T>,
    kernels: &Tensor4D<T>,
    grad_output: &Tensor4D<T>,
    stride: usize,
    dilation: usize,
) -> Result<ConvGrads<T>> {
    let (xs, ks) = (input.shape(), kernels.shape());
    if xs.c != ks.c {
        return Err(Error::dim("input channels", ks.c, xs.c));
    }
    let g = ConvGeometry::same(xs.h, xs.w, ks.h, ks.w, stride, dilation)?;
    grad_output
        .shape()
        .expect(&Shape::new(xs.n, ks.n, g.out_h, g.out_w))?;
    if stride == 1 && !input.is_empty() {
        return Ok(direct::backward(input, kernels, grad_output, &g));
    }

    let k = ks.c * ks.h * ks.w;
    let plane = g.out_plane();
    let weights_t = transpose(&widen_all(kernels.data()), ks.n, k);
    let mut grad_w = vec![0.0f64; ks.n * k];
    let mut grad_b = vec![0.0f64; ks.n];
    let mut grad_in = Tensor4D::zeros(xs);
    let chunk = samples_per_chunk(k, plane);
    let mut n0 = 0;
    while n0 < xs.n {
        let n1 = (n0 + chunk).min(xs.n);
        let count = n1 - n0;
        let np = count * plane;
        let mut go = vec![0.0f64; ks.n * np];
        for (j, n) in (n0..n1).enumerate() {
            for co in 0..ks.n {
                let dst = &mut go[co * np + j * plane..co * np + (j + 1) * plane];
                for (d, s) in dst.iter_mut().zip(grad_output.plane(n, co)) {
                    *d = s.widen();
                }
            }
        }
        for (co, row) in go.chunks(np).enumerate() {
            grad_b[co] += row.iter().sum::<f64>();
        }
        let cols = im2col(input, &g, n0, n1);
        matmul_abt_acc(&go, &cols, &mut grad_w, ks.n, k, np);
        drop(cols);

        let mut gcols = vec![0.0f64; k * np];
        matmul_acc(&weights_t, &go, &mut gcols, k, ks.n, np);
        let mut gin = vec![0.0f64; count * xs.c * xs.plane()];
        col2im(&gcols, &mut gin, xs, &g, count);
        let item = xs.c * xs.plane();
        for (d, s) in grad_in.data_mut()[n0 * item..n1 * item].iter_mut().zip(&gin) {
            *d = T::narrow(*s);
        }
        n0 = n1;
    }
    Ok(ConvGrads {
        input: grad_in,
        kernels: Tensor4D::new(ks, grad_w.into_iter().map(T::narrow).collect())?,
        bias: grad_b.into_iter().map(T::narrow).collect(),
    })
}

fn check_upconv<T: Scalar>(input: &Tensor4D<T>, kernels: &Tensor4D<T>, stride: usize) -> Result<()> {
    let ks = kernels.shape();
    if stride != 2 || ks.h != 2 || ks.w != 2 {
        return Err(Error::Unsupported(format!(
            "up-convolution must double the spatial size (2x2 kernel, stride 2); got {}x{} kernel, stride {}",
            ks.h, ks.w, stride
        )));
    }
    if input.shape().c != ks.n {
        return Err(Error::dim("input channels", ks.n, input.shape().c));
    }
    Ok(())
}

/// Gathers a tensor into a `c × (n·h·w)` matrix.
fn channel_major<T: Scalar>(t: &Tensor4D<T>) -> Vec<f64> {
    let s = t.shape();
    let (plane, np) = (s.plane(), s.n * s.plane());
    let mut m = vec![0.0; s.c * np];
    for n in 0..s.n {
        for c in 0..s.c {
            for (d, v) in m[c * np + n * plane..c * np + (n + 1) * plane]
                .iter_mut()
                .zip(t.plane(n, c))
            {
                *d = v.widen();
            }
        }
    }
    m
}

/// Up-convolution with a 2×2 kernel at stride 2: every input pixel stamps the
/// kernel onto a disjoint 2×2 output patch.
///
/// `kernels` is `(c_in, c_out, 2, 2)`.
pub fn transposed_conv2d<T: Scalar>(
    input: &Tensor4D<T>,
    kernels: &Tensor4D<T>,
    bias: &[T],
    stride: usize,
) -> Result<Tensor4D<T>> {
    check_upconv(input, kernels, stride)?;
    let (xs, ks) = (input.shape(), kernels.shape());
    let c_out = ks.c;
    if bias.len() != c_out {
        return Err(Error::dim("bias length", c_out, bias.len()));
    }
    let np = xs.n * xs.plane();
    let x = channel_major(input);
    let wt = transpose(&widen_all(kernels.data()), ks.n, c_out * 4);
    let mut stamps = vec![0.0; c_out * 4 * np];
    matmul_acc(&wt, &x, &mut stamps, c_out * 4, ks.n, np);

    let mut out = Tensor4D::zeros(Shape::new(xs.n, c_out, xs.h * 2, xs.w * 2));
    let ow = xs.w * 2;
    for n in 0..xs.n {
        for co in 0..c_out {
            let b = bias[co].widen();
            let dst = out.plane_mut(n, co);
            for tap in 0..4 {
                let (a, bx) = (tap / 2, tap % 2);
                let src = &stamps[(co * 4 + tap) * np + n * xs.plane()..][..xs.plane()];
                for y in 0..xs.h {
                    for xx in 0..xs.w {
                        dst[(2 * y + a) * ow + 2 * xx + bx] = T::narrow(src[y * xs.w + xx] + b);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn transposed_conv2d_backward<T: Scalar>(
    input: &Tensor4D<T>,
    kernels: &Tensor4D<T>,
    grad_output: &Tensor4D<T>,
    stride: usize,
) -> Result<ConvGrads<T>> {
    check_upconv(input, kernels, stride)?;
    let (xs, ks) = (input.shape(), kernels.shape());
    let c_out = ks.c;
    grad_output
        .shape()
        .expect(&Shape::new(xs.n, c_out, xs.h * 2, xs.w * 2))?;
    let np = xs.n * xs.plane();
    let ow = xs.w * 2;
    let mut g = vec![0.0; c_out * 4 * np];
    let mut grad_b = vec![0.0f64; c_out];
    for n in 0..xs.n {
        for co in 0..c_out {
            let src = grad_output.plane(n, co);
            grad_b[co] += src.iter().map(|v| v.widen()).sum::<f64>();
            for tap in 0..4 {
                let (a, bx) = (tap / 2, tap % 2);
                let dst = &mut g[(co * 4 + tap) * np + n * xs.plane()..][..xs.plane()];
                for y in 0..xs.h {
                    for xx in 0..xs.w {
                        dst[y * xs.w + xx] = src[(2 * y + a) * ow + 2 * xx + bx].widen();
                    }
                }
            }
        }
    }
    let x = channel_major(input);
    let w = widen_all(kernels.data());
    let mut grad_w = vec![0.0; ks.n * c_out * 4];
    matmul_abt_acc(&x, &g, &mut grad_w, ks.n, c_out * 4, np);
    let mut gx = vec![0.0; ks.n * np];
    matmul_acc(&w, &g, &mut gx, ks.n, c_out * 4, np);

    let mut grad_in = Tensor4D::zeros(xs);
    for n in 0..xs.n {
        for ci in 0..xs.c {
            let src = &gx[ci * np + n * xs.plane()..][..xs.plane()];
            for (d, s) in grad_in.plane_mut(n, ci).iter_mut().zip(src) {
                *d = T::narrow(*s);
            }
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        kernels: Tensor4D::new(ks, grad_w.into_iter().map(T::narrow).collect())?,
        bias: grad_b.into_iter().map(T::narrow).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct summation with explicit zero padding, independent of the
    /// column lowering.
    fn conv_oracle(x: &Tensor4D<f64>, k: &Tensor4D<f64>, bias: &[f64], stride: usize, dil: usize) -> Tensor4D<f64> {
        let (xs, ks) = (x.shape(), k.shape());
        let g = ConvGeometry::same(xs.h, xs.w, ks.h, ks.w, stride, dil).unwrap();
        Tensor4D::from_fn(Shape::new(xs.n, ks.n, g.out_h, g.out_w), |n, co, oy, ox| {
            let mut s = bias[co];
            for ci in 0..xs.c {
                for ky in 0..ks.h {
                    for kx in 0..ks.w {
                        let iy = (oy * stride + ky * dil) as isize - g.pad_top as isize;
                        let ix = (ox * stride + kx * dil) as isize - g.pad_left as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                            s += k.get(co, ci, ky, kx) * x.get(n, ci, iy as usize, ix as usize);
                        }
                    }
                }
            }
            s
        })
    }

    fn pseudo(shape: Shape, seed: u64) -> Tensor4D<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor4D::from_fn(shape, |_, _, _, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn ones_3x3_matches_window_counts() {
        let x = Tensor4D::<f32>::filled(Shape::new(1, 1, 3, 3), 1.0);
        let k = Tensor4D::<f32>::filled(Shape::new(1, 1, 3, 3), 1.0);
        let y = conv2d(&x, &k, &[0.0], 1, 1).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn dilation_two_on_5x5_ones() {
        let x = Tensor4D::<f32>::filled(Shape::new(1, 1, 5, 5), 1.0);
        let k = Tensor4D::<f32>::filled(Shape::new(1, 1, 3, 3), 1.0);
        let y = conv2d(&x, &k, &[0.0], 1, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 5, 5));
        assert_eq!(y.get(0, 0, 2, 2), 9.0);
        assert_eq!(y.get(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = pseudo(Shape::new(2, 1, 5, 7), 3).cast::<f32>();
        let k = Tensor4D::<f32>::filled(Shape::new(1, 1, 1, 1), 1.0);
        assert_eq!(conv2d(&x, &k, &[0.0], 1, 1).unwrap(), x);
    }

    #[test]
    fn matches_direct_summation_oracle() {
        for &(stride, dil, kh) in &[(1, 1, 3), (1, 2, 3), (1, 4, 3), (2, 1, 3), (2, 3, 3), (1, 1, 1), (3, 1, 2), (1, 8, 3), (1, 16, 3)] {
            let x = pseudo(Shape::new(2, 3, 9, 7), 11);
            let k = pseudo(Shape::new(4, 3, kh, kh), 12);
            let bias = [0.1, -0.2, 0.3, 0.0];
            let fast = conv2d(&x, &k, &bias, stride, dil).unwrap();
            let slow = conv_oracle(&x, &k, &bias, stride, dil);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "stride {stride} dil {dil}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn dilation_wider_than_map_keeps_only_centre_tap() {
        let x = pseudo(Shape::new(1, 2, 4, 4), 31);
        let k = pseudo(Shape::new(1, 2, 3, 3), 32);
        let y = conv2d(&x, &k, &[0.0], 1, 16).unwrap();
        for yy in 0..4 {
            for xx in 0..4 {
                let want = k.get(0, 0, 1, 1) * x.get(0, 0, yy, xx) + k.get(0, 1, 1, 1) * x.get(0, 1, yy, xx);
                assert!((y.get(0, 0, yy, xx) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_padding_preserves_shape() {
        for k in [1, 2, 3, 5] {
            for d in [1, 2, 4, 8, 16] {
                let g = ConvGeometry::same(15, 12, k, k, 1, d).unwrap();
                assert_eq!((g.out_h, g.out_w), (15, 12));
            }
        }
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor4D::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let k = Tensor4D::<f32>::zeros(Shape::new(1, 3, 3, 3));
        match conv2d(&x, &k, &[0.0], 1, 1).unwrap_err() {
            Error::Dimension { axis, .. } => assert_eq!(axis, "input channels"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn backward_single_pixel_through_identity() {
        let x = Tensor4D::<f32>::zeros(Shape::new(1, 1, 4, 4));
        let k = Tensor4D::<f32>::filled(Shape::new(1, 1, 1, 1), 1.0);
        let mut go = Tensor4D::<f32>::zeros(Shape::new(1, 1, 4, 4));
        go.set(0, 0, 2, 1, 1.0);
        let g = conv2d_backward(&x, &k, &go, 1, 1).unwrap();
        assert_eq!(g.input, go);
    }

    #[test]
    fn backward_of_zero_is_zero() {
        let x = pseudo(Shape::new(2, 2, 6, 6), 5);
        let k = pseudo(Shape::new(3, 2, 3, 3), 6);
        let go = Tensor4D::zeros(Shape::new(2, 3, 6, 6));
        let g = conv2d_backward(&x, &k, &go, 1, 2).unwrap();
        assert_eq!(g.input.max_abs(), 0.0);
        assert_eq!(g.kernels.max_abs(), 0.0);
        assert!(g.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn backward_rejects_wrong_grad_shape() {
        let x = Tensor4D::<f32>::zeros(Shape::new(1, 1, 4, 4));
        let k = Tensor4D::<f32>::zeros(Shape::new(2, 1, 3, 3));
        let go = Tensor4D::<f32>::zeros(Shape::new(1, 2, 4, 3));
        assert!(matches!(conv2d_backward(&x, &k, &go, 1, 1), Err(Error::Dimension { .. })));
    }

    /// Adjoint identity <conv(x), g> = <x, convᵀ(g)> checked against the
    /// column-free oracle for strided and dilated cases.
    #[test]
    fn backward_is_adjoint_of_forward() {
        for &(stride, dil) in &[(1, 1), (1, 3), (2, 1), (2, 2), (1, 8), (1, 16)] {
            let x = pseudo(Shape::new(2, 2, 7, 6), 21);
            let k = pseudo(Shape::new(3, 2, 3, 3), 22);
            let y = conv_oracle(&x, &k, &[0.0; 3], stride, dil);
            let go = pseudo(y.shape(), 23);
            let g = conv2d_backward(&x, &k, &go, stride, dil).unwrap();
            let lhs: f64 = y.data().iter().zip(go.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(g.input.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
            let rhs_k: f64 = k.data().iter().zip(g.kernels.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs_k).abs() < 1e-10);
        }
    }

    #[test]
    fn upconv_stamps_kernel() {
        let x = Tensor4D::<f32>::filled(Shape::new(1, 1, 1, 1), 1.0);
        let k = Tensor4D::<f32>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])
            .unwrap()
            .reshape(Shape::new(1, 1, 2, 2))
            .unwrap();
        let y = transposed_conv2d(&x, &k, &[0.0], 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn upconv_disjoint_stamps_and_zero() {
        let x = Tensor4D::<f32>::filled(Shape::new(1, 1, 2, 2), 1.0);
        let k = Tensor4D::<f32>::filled(Shape::new(1, 1, 2, 2), 1.0);
        let y = transposed_conv2d(&x, &k, &[0.0], 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
        assert!(y.data().iter().all(|&v| v == 1.0));
        let z = transposed_conv2d(&Tensor4D::zeros(Shape::new(1, 1, 2, 2)), &k, &[0.0], 2).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn upconv_rejects_non_doubling() {
        let x = Tensor4D::<f32>::zeros(Shape::new(1, 1, 2, 2));
        let k = Tensor4D::<f32>::zeros(Shape::new(1, 1, 3, 3));
        assert!(matches!(transposed_conv2d(&x, &k, &[0.0], 2), Err(Error::Unsupported(_))));
        let k = Tensor4D::<f32>::zeros(Shape::new(1, 1, 2, 2));
        assert!(matches!(transposed_conv2d(&x, &k, &[0.0], 1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn upconv_backward_is_adjoint() {
        let x = pseudo(Shape::new(2, 3, 3, 4), 31);
        let k = pseudo(Shape::new(3, 2, 2, 2), 32);
        let y = transposed_conv2d(&x, &k, &[0.0, 0.0], 2).unwrap();
        let go = pseudo(y.shape(), 33);
        let g = transposed_conv2d_backward(&x, &k, &go, 2).unwrap();
        let lhs: f64 = y.data().iter().zip(go.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(g.input.data()).map(|(a, b)| a * b).sum();
        let rhs_k: f64 = k.data().iter().zip(g.kernels.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        assert!((lhs - rhs_k).abs() < 1e-10);
    }
}
