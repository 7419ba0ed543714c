//! Stride-1 same convolution computed directly on zero-padded `f64` planes.
//!
//! Output pixels are laid out on the padded row pitch, so every kernel tap is
//! one contiguous multiply-add over the whole plane. The few pitch columns
//! past the image width are scratch and are dropped when copying out.

use rayon::prelude::*;

use crate::numerics::conv::{ConvGeometry, ConvGrads};
use crate::numerics::gemm::{dispatch, dot};
use crate::numerics::tensor::{Shape, Tensor4D};
use crate::scalar::Scalar;

const ROWS: usize = 4;

struct Grid {
    h: usize,
    w: usize,
    hp: usize,
    wp: usize,
    pad_top: usize,
    pad_left: usize,
    /// Span of the flattened output on the padded pitch.
    len: usize,
    /// `(tap index, flat offset)` of taps that touch the image at all.
    taps: Vec<(usize, usize)>,
}

impl Grid {
    fn new(g: &ConvGeometry) -> Self {
        debug_assert_eq!(g.stride, 1);
        let (h, w) = (g.in_h, g.in_w);
        let hp = h + g.dilation * (g.kh - 1);
        let wp = w + g.dilation * (g.kw - 1);
        let hits = |k: usize, pad: usize, len: usize| {
            let off = (k * g.dilation) as isize - pad as isize;
            off > -(len as isize) && off < len as isize
        };
        let mut taps = Vec::new();
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                if hits(ky, g.pad_top, h) && hits(kx, g.pad_left, w) {
                    taps.push((ky * g.kw + kx, ky * g.dilation * wp + kx * g.dilation));
                }
            }
        }
        Grid {
            h,
            w,
            hp,
            wp,
            pad_top: g.pad_top,
            pad_left: g.pad_left,
            len: (h - 1) * wp + w,
            taps,
        }
    }

    fn padded_plane(&self) -> usize {
        self.hp * self.wp
    }

    /// Copies all channels of sample `n` into zero-padded planes.
    fn pad<T: Scalar>(&self, t: &Tensor4D<T>, n: usize) -> Vec<f64> {
        let c = t.shape().c;
        let pp = self.padded_plane();
        let mut out = vec![0.0; c * pp];
        for ci in 0..c {
            let src = t.plane(n, ci);
            let dst = &mut out[ci * pp..(ci + 1) * pp];
            for y in 0..self.h {
                let row = (y + self.pad_top) * self.wp + self.pad_left;
                for (d, s) in dst[row..row + self.w].iter_mut().zip(&src[y * self.w..(y + 1) * self.w]) {
                    *d = s.widen();
                }
            }
        }
        out
    }

    /// Lays sample `n` out on the output pitch with zeroed scratch columns.
    fn spread<T: Scalar>(&self, t: &Tensor4D<T>, n: usize) -> Vec<f64> {
        let c = t.shape().c;
        let mut out = vec![0.0; c * self.len];
        for ch in 0..c {
            let src = t.plane(n, ch);
            let dst = &mut out[ch * self.len..(ch + 1) * self.len];
            for y in 0..self.h {
                for (d, s) in dst[y * self.wp..y * self.wp + self.w]
                    .iter_mut()
                    .zip(&src[y * self.w..(y + 1) * self.w])
                {
                    *d = s.widen();
                }
            }
        }
        out
    }
}

#[inline(always)]
fn axpy4(dst: &mut [f64], w: [f64; ROWS], src: &[f64], len: usize) {
    let (d0, rest) = dst.split_at_mut(len);
    let (d1, rest) = rest.split_at_mut(len);
    let (d2, d3) = rest.split_at_mut(len);
    let src = &src[..len];
    for i in 0..len {
        let v = src[i];
        d0[i] += w[0] * v;
        d1[i] += w[1] * v;
        d2[i] += w[2] * v;
        d3[i] += w[3] * v;
    }
}

/// Four dot products sharing `a`, each reduced exactly like [`dot`].
#[inline(always)]
fn dot4(a: &[f64], b: [&[f64]; ROWS]) -> [f64; ROWS] {
    const LANES: usize = 8;
    let len = a.len();
    let b = b.map(|s| &s[..len]);
    let mut lanes = [[0.0f64; LANES]; ROWS];
    let full = len - len % LANES;
    let mut i = 0;
    while i < full {
        for l in 0..LANES {
            let v = a[i + l];
            lanes[0][l] += v * b[0][i + l];
            lanes[1][l] += v * b[1][i + l];
            lanes[2][l] += v * b[2][i + l];
            lanes[3][l] += v * b[3][i + l];
        }
        i += LANES;
    }
    std::array::from_fn(|j| {
        let mut tail = 0.0;
        for t in full..len {
            tail += a[t] * b[j][t];
        }
        let l = &lanes[j];
        let s01 = (l[0] + l[1]) + (l[2] + l[3]);
        let s23 = (l[4] + l[5]) + (l[6] + l[7]);
        (s01 + s23) + tail
    })
}

/// `planes[j][off..] += w[j] · src` for four consecutive planes of size `pp`.
#[inline(always)]
fn scatter4(planes: &mut [f64], pp: usize, off: usize, w: [f64; ROWS], src: &[f64]) {
    let len = src.len();
    let (p0, rest) = planes.split_at_mut(pp);
    let (p1, rest) = rest.split_at_mut(pp);
    let (p2, p3) = rest.split_at_mut(pp);
    let (d0, d1, d2, d3) = (
        &mut p0[off..off + len],
        &mut p1[off..off + len],
        &mut p2[off..off + len],
        &mut p3[off..off + len],
    );
    for i in 0..len {
        let v = src[i];
        d0[i] += w[0] * v;
        d1[i] += w[1] * v;
        d2[i] += w[2] * v;
        d3[i] += w[3] * v;
    }
}

#[inline(always)]
fn axpy(dst: &mut [f64], w: f64, src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += w * s;
    }
}

pub(crate) fn forward<T: Scalar>(
    input: &Tensor4D<T>,
    kernels: &Tensor4D<T>,
    bias: &[T],
    g: &ConvGeometry,
) -> Tensor4D<T> {
    let (xs, ks) = (input.shape(), kernels.shape());
    let grid = Grid::new(g);
    let (len, pp, kk) = (grid.len, grid.padded_plane(), ks.h * ks.w);
    let k = ks.c * kk;
    let weights: Vec<f64> = kernels.data().iter().map(|v| v.widen()).collect();
    let mut out = Tensor4D::zeros(Shape::new(xs.n, ks.n, xs.h, xs.w));
    for n in 0..xs.n {
        let xp = grid.pad(input, n);
        let mut acc = vec![0.0f64; ks.n * len];
        acc.par_chunks_mut(ROWS * len).enumerate().for_each(|(blk, rows)| {
            let co0 = blk * ROWS;
            let r = rows.len() / len;
            dispatch(|| {
                for j in 0..r {
                    rows[j * len..(j + 1) * len].fill(bias[co0 + j].widen());
                }
                for ci in 0..ks.c {
                    let plane = &xp[ci * pp..(ci + 1) * pp];
                    for &(t, off) in &grid.taps {
                        let src = &plane[off..off + len];
                        let wi = ci * kk + t;
                        if r == ROWS {
                            let w = [
                                weights[co0 * k + wi],
                                weights[(co0 + 1) * k + wi],
                                weights[(co0 + 2) * k + wi],
                                weights[(co0 + 3) * k + wi],
                            ];
                            axpy4(rows, w, src, len);
                        } else {
                            for j in 0..r {
                                axpy(&mut rows[j * len..(j + 1) * len], weights[(co0 + j) * k + wi], src);
                            }
                        }
                    }
                }
            });
        });
        for co in 0..ks.n {
            let src = &acc[co * len..(co + 1) * len];
            let dst = out.plane_mut(n, co);
            for y in 0..xs.h {
                for (d, &s) in dst[y * xs.w..(y + 1) * xs.w].iter_mut().zip(&src[y * grid.wp..]) {
                    *d = T::narrow(s);
                }
            }
        }
    }
    out
}

pub(crate) fn backward<T: Scalar>(
    input: &Tensor4D<T>,
    kernels: &Tensor4D<T>,
    grad_output: &Tensor4D<T>,
    g: &ConvGeometry,
) -> ConvGrads<T> {
    let (xs, ks) = (input.shape(), kernels.shape());
    let grid = Grid::new(g);
    let (len, pp, kk) = (grid.len, grid.padded_plane(), ks.h * ks.w);
    let k = ks.c * kk;
    let weights: Vec<f64> = kernels.data().iter().map(|v| v.widen()).collect();
    let mut grad_w = vec![0.0f64; ks.n * k];
    let mut grad_b = vec![0.0f64; ks.n];
    let mut grad_in = Tensor4D::zeros(xs);
    for n in 0..xs.n {
        let xp = grid.pad(input, n);
        let go = grid.spread(grad_output, n);
        for (co, b) in grad_b.iter_mut().enumerate() {
            *b += go[co * len..(co + 1) * len].iter().sum::<f64>();
        }
        grad_w.par_chunks_mut(k).enumerate().for_each(|(co, row)| {
            let gco = &go[co * len..(co + 1) * len];
            dispatch(|| {
                for ci in 0..ks.c {
                    let plane = &xp[ci * pp..(ci + 1) * pp];
                    let mut groups = grid.taps.chunks_exact(ROWS);
                    for grp in &mut groups {
                        let d = dot4(gco, std::array::from_fn(|j| &plane[grp[j].1..]));
                        for j in 0..ROWS {
                            row[ci * kk + grp[j].0] += d[j];
                        }
                    }
                    for &(t, off) in groups.remainder() {
                        row[ci * kk + t] += dot(gco, &plane[off..off + len]);
                    }
                }
            });
        });
        drop(xp);

        let mut gpad = vec![0.0f64; xs.c * pp];
        gpad.par_chunks_mut(ROWS * pp).enumerate().for_each(|(blk, planes)| {
            let ci0 = blk * ROWS;
            let r = planes.len() / pp;
            dispatch(|| {
                for co in 0..ks.n {
                    let gco = &go[co * len..(co + 1) * len];
                    for &(t, off) in &grid.taps {
                        if r == ROWS {
                            let w = std::array::from_fn(|j| weights[co * k + (ci0 + j) * kk + t]);
                            scatter4(planes, pp, off, w, gco);
                        } else {
                            for j in 0..r {
                                let w = weights[co * k + (ci0 + j) * kk + t];
                                axpy(&mut planes[j * pp + off..j * pp + off + len], w, gco);
                            }
                        }
                    }
                }
            });
        });
        for ci in 0..xs.c {
            let src = &gpad[ci * pp..(ci + 1) * pp];
            let dst = grad_in.plane_mut(n, ci);
            for y in 0..xs.h {
                let row = (y + grid.pad_top) * grid.wp + grid.pad_left;
                for (d, &s) in dst[y * xs.w..(y + 1) * xs.w].iter_mut().zip(&src[row..]) {
                    *d = T::narrow(s);
                }
            }
        }
    }
    ConvGrads {
        input: grad_in,
        kernels: Tensor4D::new(ks, grad_w.into_iter().map(T::narrow).collect()).expect("kernel-shaped"),
        bias: grad_b.into_iter().map(T::narrow).collect(),
    }
}
