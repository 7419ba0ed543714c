//! Activations, dropout and the structural joins (channel concat, residual add).

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::tensor::{Shape, Tensor4D};
use crate::scalar::Scalar;

pub fn relu<T: Scalar>(x: &Tensor4D<T>) -> Tensor4D<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// `input` is the pre-activation tensor.
pub fn relu_backward<T: Scalar>(grad_output: &Tensor4D<T>, input: &Tensor4D<T>) -> Result<Tensor4D<T>> {
    grad_output.zip_map(input, |g, x| if x > T::zero() { g } else { T::zero() })
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor4D<T>) -> Tensor4D<T> {
    x.map(|v| T::narrow(sigmoid_scalar(v.widen())))
}

/// `output` is the sigmoid's own output.
pub fn sigmoid_backward<T: Scalar>(grad_output: &Tensor4D<T>, output: &Tensor4D<T>) -> Result<Tensor4D<T>> {
    grad_output.zip_map(output, |g, y| {
        let y = y.widen();
        T::narrow(g.widen() * y * (1.0 - y))
    })
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)`.
///
/// Returns the output and the per-element scale (0 or `1 / (1 - rate)`),
/// which is all the backward pass needs.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor4D<T>,
    rate: f64,
    rng: &mut R,
) -> Result<(Tensor4D<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = T::narrow(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let out = x
        .data()
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| v * m)
        .collect();
    Ok((Tensor4D::new(x.shape(), out)?, mask))
}

pub fn dropout_backward<T: Scalar>(grad_output: &Tensor4D<T>, mask: &[T]) -> Result<Tensor4D<T>> {
    if mask.len() != grad_output.len() {
        return Err(Error::dim("dropout mask length", grad_output.len(), mask.len()));
    }
    let data = grad_output
        .data()
        .iter()
        .zip(mask)
        .map(|(&g, &m)| g * m)
        .collect();
    Tensor4D::new(grad_output.shape(), data)
}

/// Stacks `skip` then `upsampled` along the channel axis.
pub fn concat_channels<T: Scalar>(skip: &Tensor4D<T>, upsampled: &Tensor4D<T>) -> Result<Tensor4D<T>> {
    let (a, b) = (skip.shape(), upsampled.shape());
    if a.n != b.n {
        return Err(Error::dim("batch", a.n, b.n));
    }
    if a.h != b.h {
        return Err(Error::dim("height", a.h, b.h));
    }
    if a.w != b.w {
        return Err(Error::dim("width", a.w, b.w));
    }
    let out_shape = a.with_channels(a.c + b.c);
    let mut data = Vec::with_capacity(out_shape.len());
    for n in 0..a.n {
        data.extend_from_slice(skip.item(n));
        data.extend_from_slice(upsampled.item(n));
    }
    Tensor4D::new(out_shape, data)
}

/// Adjoint of [`concat_channels`]: splits after the first `skip_channels`.
pub fn split_channels<T: Scalar>(grad: &Tensor4D<T>, skip_channels: usize) -> Result<(Tensor4D<T>, Tensor4D<T>)> {
    let s = grad.shape();
    if skip_channels > s.c {
        return Err(Error::dim("channels", skip_channels, s.c));
    }
    let sa = s.with_channels(skip_channels);
    let sb = s.with_channels(s.c - skip_channels);
    let mut a = Vec::with_capacity(sa.len());
    let mut b = Vec::with_capacity(sb.len());
    let cut = skip_channels * s.plane();
    for n in 0..s.n {
        let item = grad.item(n);
        a.extend_from_slice(&item[..cut]);
        b.extend_from_slice(&item[cut..]);
    }
    Ok((Tensor4D::new(sa, a)?, Tensor4D::new(sb, b)?))
}

pub fn residual_add<T: Scalar>(a: &Tensor4D<T>, b: &Tensor4D<T>) -> Result<Tensor4D<T>> {
    a.zip_map(b, |x, y| x + y)
}

/// Shape of the concatenation of `skip` and `up` channel counts.
pub fn concat_shape(skip: Shape, up_channels: usize) -> Shape {
    skip.with_channels(skip.c + up_channels)
}
