//! Small dense matrix kernels in `f64`.
//!
//! Every output element is reduced in a fixed order that depends only on the
//! matrix dimensions, so results are bit-identical whatever the thread count.

use rayon::prelude::*;

const ROWS: usize = 4;
const TILE: usize = 256;
const LANES: usize = 8;

/// Runs `body` through a copy compiled for the widest vector unit the CPU has. The
/// kernels never fuse multiply and add, so both copies round identically.
#[inline(always)]
pub(crate) fn dispatch<R>(body: impl FnOnce() -> R) -> R {
    #[cfg(target_arch = "x86_64")]
    {
        #[target_feature(enable = "avx512f")]
        unsafe fn widest<R>(body: impl FnOnce() -> R) -> R {
            body()
        }
        #[target_feature(enable = "avx2")]
        unsafe fn wide<R>(body: impl FnOnce() -> R) -> R {
            body()
        }
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at run time.
            return unsafe { widest(body) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { wide(body) };
        }
    }
    body()
}

/// `out[m×p] += a[m×k] · b[k×p]`, all row-major.
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(out.len(), m * p);
    if m == 0 || p == 0 {
        return;
    }
    out.par_chunks_mut(ROWS * p)
        .enumerate()
        .for_each(|(blk, rows)| {
            let m0 = blk * ROWS;
            let r = rows.len() / p;
            dispatch(|| acc_rows(&a[m0 * k..(m0 + r) * k], b, rows, k, p));
        });
}

#[inline(always)]
fn acc_rows(a_rows: &[f64], b: &[f64], rows: &mut [f64], k: usize, p: usize) {
    let r = rows.len() / p;
    let mut p0 = 0;
    while p0 < p {
        let pl = TILE.min(p - p0);
        if r == ROWS {
            let (o0, rest) = rows.split_at_mut(p);
            let (o1, rest) = rest.split_at_mut(p);
            let (o2, o3) = rest.split_at_mut(p);
            let o0 = &mut o0[p0..p0 + pl];
            let o1 = &mut o1[p0..p0 + pl];
            let o2 = &mut o2[p0..p0 + pl];
            let o3 = &mut o3[p0..p0 + pl];
            for kk in 0..k {
                let bt = &b[kk * p + p0..kk * p + p0 + pl];
                let (w0, w1, w2, w3) = (a_rows[kk], a_rows[k + kk], a_rows[2 * k + kk], a_rows[3 * k + kk]);
                for j in 0..pl {
                    let v = bt[j];
                    o0[j] += w0 * v;
                    o1[j] += w1 * v;
                    o2[j] += w2 * v;
                    o3[j] += w3 * v;
                }
            }
        } else {
            for ri in 0..r {
                let o = &mut rows[ri * p + p0..ri * p + p0 + pl];
                for kk in 0..k {
                    let w = a_rows[ri * k + kk];
                    let bt = &b[kk * p + p0..kk * p + p0 + pl];
                    for (oj, &v) in o.iter_mut().zip(bt) {
                        *oj += w * v;
                    }
                }
            }
        }
        p0 += pl;
    }
}

/// `out[m×k] += a[m×p] · b[k×p]ᵀ`, all row-major.
pub fn matmul_abt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(out.len(), m * k);
    if m == 0 || k == 0 {
        return;
    }
    out.par_chunks_mut(ROWS * k)
        .enumerate()
        .for_each(|(blk, rows)| {
            let m0 = blk * ROWS;
            dispatch(|| abt_rows(&a[m0 * p..], b, rows, k, p));
        });
}

#[inline(always)]
fn abt_rows(a: &[f64], b: &[f64], rows: &mut [f64], k: usize, p: usize) {
    let r = rows.len() / k;
    let mut p0 = 0;
    while p0 < p {
        let pl = (TILE * 4).min(p - p0);
        for kk in 0..k {
            let bt = &b[kk * p + p0..kk * p + p0 + pl];
            for ri in 0..r {
                let at = &a[ri * p + p0..ri * p + p0 + pl];
                rows[ri * k + kk] += dot(at, bt);
            }
        }
        p0 += pl;
    }
}

/// Lane-split dot product with a fixed summation tree.
#[inline(always)]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    let s01 = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    let s23 = (lanes[4] + lanes[5]) + (lanes[6] + lanes[7]);
    (s01 + s23) + tail
}

/// Row-major transpose of an `r×c` matrix.
pub fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = a[i * c + j];
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for j in 0..p {
                for t in 0..k {
                    out[i * p + j] += a[i * k + t] * b[t * p + j];
                }
            }
        }
        out
    }

    fn seq(len: usize, seed: u64) -> Vec<f64> {
        (0..len)
            .map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f64) / 500.0 - 1.0)
            .collect()
    }

    #[test]
    fn matmul_matches_naive_for_ragged_sizes() {
        for &(m, k, p) in &[(1, 1, 1), (3, 5, 7), (4, 9, 300), (7, 2, 513), (9, 16, 40)] {
            let a = seq(m * k, 1);
            let b = seq(k * p, 2);
            let mut out = vec![0.0; m * p];
            matmul_acc(&a, &b, &mut out, m, k, p);
            for (x, y) in out.iter().zip(naive(&a, &b, m, k, p)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_abt_matches_naive() {
        for &(m, k, p) in &[(1, 1, 1), (5, 3, 7), (4, 9, 1100), (6, 2, 33)] {
            let a = seq(m * p, 3);
            let b = seq(k * p, 4);
            let mut out = vec![0.0; m * k];
            matmul_abt_acc(&a, &b, &mut out, m, k, p);
            let bt = transpose(&b, k, p);
            for (x, y) in out.iter().zip(naive(&a, &bt, m, p, k)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..19).map(|v| v as f64).collect();
        assert_eq!(dot(&a, &a), (0..19).map(|v| (v * v) as f64).sum::<f64>());
    }
}
