use crate::error::{Error, Result};
use crate::numerics::tensor::{Shape, Tensor4D};
use crate::scalar::Scalar;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Per-channel running mean and (biased) variance used at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
    /// False until the first training-mode batch has been seen.
    pub calibrated: bool,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
            calibrated: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// First batch seeds the statistics; later batches blend in with `momentum`.
    fn absorb(&mut self, mean: &[f64], var: &[f64]) {
        let m = if self.calibrated { self.momentum } else { 0.0 };
        for c in 0..self.mean.len() {
            self.mean[c] = T::narrow(m * self.mean[c].widen() + (1.0 - m) * mean[c]);
            self.var[c] = T::narrow(m * self.var[c].widen() + (1.0 - m) * var[c]);
        }
        self.calibrated = true;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalise by batch statistics; optionally fold them into the running stats.
    Train { update_running: bool },
    /// Normalise by the running statistics.
    Infer,
}

/// What [`batchnorm_backward`] needs from a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub normalized: Tensor4D<T>,
    pub inv_std: Vec<f64>,
}

fn check_affine<T: Scalar>(shape: Shape, gamma: &[T], beta: &[T], stats: &RunningStats<T>) -> Result<()> {
    if gamma.len() != shape.c {
        return Err(Error::dim("gamma length", shape.c, gamma.len()));
    }
    if beta.len() != shape.c {
        return Err(Error::dim("beta length", shape.c, beta.len()));
    }
    if stats.channels() != shape.c {
        return Err(Error::dim("running stats channels", shape.c, stats.channels()));
    }
    Ok(())
}

/// Batch normalisation over (n, h, w) per channel.
///
/// The cache is returned only in training mode, where the output depends on
/// the batch statistics.
pub fn batchnorm<T: Scalar>(
    input: &Tensor4D<T>,
    gamma: &[T],
    beta: &[T],
    mode: NormMode,
    stats: &mut RunningStats<T>,
) -> Result<(Tensor4D<T>, Option<NormCache<T>>)> {
    let s = input.shape();
    check_affine(s, gamma, beta, stats)?;
    match mode {
        NormMode::Infer => Ok((batchnorm_infer(input, gamma, beta, stats)?, None)),
        NormMode::Train { update_running } => {
            let count = (s.n * s.plane()) as f64;
            if count == 0.0 {
                return Err(Error::Config("batch normalisation over an empty batch".into()));
            }
            let mut mean = vec![0.0f64; s.c];
            let mut var = vec![0.0f64; s.c];
            for c in 0..s.c {
                let mut sum = 0.0;
                for n in 0..s.n {
                    sum += input.plane(n, c).iter().map(|v| v.widen()).sum::<f64>();
                }
                let mu = sum / count;
                let mut sq = 0.0;
                for n in 0..s.n {
                    sq += input
                        .plane(n, c)
                        .iter()
                        .map(|v| (v.widen() - mu).powi(2))
                        .sum::<f64>();
                }
                mean[c] = mu;
                var[c] = sq / count;
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.epsilon).sqrt()).collect();
            let mut normalized = Tensor4D::zeros(s);
            let mut out = Tensor4D::zeros(s);
            for n in 0..s.n {
                for c in 0..s.c {
                    let (g, b) = (gamma[c].widen(), beta[c].widen());
                    let xh: Vec<f64> = input
                        .plane(n, c)
                        .iter()
                        .map(|v| (v.widen() - mean[c]) * inv_std[c])
                        .collect();
                    for (d, &v) in normalized.plane_mut(n, c).iter_mut().zip(&xh) {
                        *d = T::narrow(v);
                    }
                    for (d, v) in out.plane_mut(n, c).iter_mut().zip(xh) {
                        *d = T::narrow(g * v + b);
                    }
                }
            }
            if update_running {
                stats.absorb(&mean, &var);
            }
            Ok((out, Some(NormCache { normalized, inv_std })))
        }
    }
}

/// Inference-mode normalisation with the running statistics.
pub fn batchnorm_infer<T: Scalar>(
    input: &Tensor4D<T>,
    gamma: &[T],
    beta: &[T],
    stats: &RunningStats<T>,
) -> Result<Tensor4D<T>> {
    check_affine(input.shape(), gamma, beta, stats)?;
    if !stats.calibrated {
        return Err(Error::State(
            "batch normalisation running statistics are uninitialised; run a training-mode pass first".into(),
        ));
    }
    let s = input.shape();
    let mut out = Tensor4D::zeros(s);
    for c in 0..s.c {
        let inv = 1.0 / (stats.var[c].widen() + stats.epsilon).sqrt();
        let scale = gamma[c].widen() * inv;
        let shift = beta[c].widen() - stats.mean[c].widen() * scale;
        for n in 0..s.n {
            for (d, v) in out.plane_mut(n, c).iter_mut().zip(input.plane(n, c)) {
                *d = T::narrow(v.widen() * scale + shift);
            }
        }
    }
    Ok(out)
}

/// Gradients of training-mode [`batchnorm`]: (input, gamma, beta).
pub fn batchnorm_backward<T: Scalar>(
    grad_output: &Tensor4D<T>,
    cache: &NormCache<T>,
    gamma: &[T],
) -> Result<(Tensor4D<T>, Vec<T>, Vec<T>)> {
    let s = cache.normalized.shape();
    grad_output.shape().expect(&s)?;
    if gamma.len() != s.c {
        return Err(Error::dim("gamma length", s.c, gamma.len()));
    }
    let count = (s.n * s.plane()) as f64;
    let mut grad_in = Tensor4D::zeros(s);
    let mut grad_gamma = Vec::with_capacity(s.c);
    let mut grad_beta = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for n in 0..s.n {
            for (dy, xh) in grad_output.plane(n, c).iter().zip(cache.normalized.plane(n, c)) {
                sum_dy += dy.widen();
                sum_dy_xh += dy.widen() * xh.widen();
            }
        }
        grad_gamma.push(T::narrow(sum_dy_xh));
        grad_beta.push(T::narrow(sum_dy));
        let k = gamma[c].widen() * cache.inv_std[c] / count;
        for n in 0..s.n {
            let dy = grad_output.plane(n, c);
            let xh = cache.normalized.plane(n, c);
            let gi = grad_in.plane_mut(n, c);
            for i in 0..gi.len() {
                gi[i] = T::narrow(k * (count * dy[i].widen() - sum_dy - xh[i].widen() * sum_dy_xh));
            }
        }
    }
    Ok((grad_in, grad_gamma, grad_beta))
}
