//! Single-layer wrappers around the raw operations, each implementing
//! [`Differentiable`] so it can be gradient-checked in isolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::conv::{conv2d, conv2d_backward, transposed_conv2d, transposed_conv2d_backward};
use crate::numerics::elementwise::{
    concat_channels, dropout, dropout_backward, relu, relu_backward, residual_add, sigmoid, sigmoid_backward,
    split_channels,
};
use crate::numerics::gradcheck::Differentiable;
use crate::numerics::norm::{batchnorm, batchnorm_backward, NormMode, RunningStats};
use crate::numerics::pool::{maxpool2d, maxpool2d_backward};
use crate::numerics::tensor::{Shape, Tensor4D};
use crate::scalar::Scalar;

/// Uniform values in `[-1, 1)` from a seeded stream.
pub fn random_tensor<T: Scalar>(shape: Shape, seed: u64) -> Tensor4D<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4D::from_fn(shape, |_, _, _, _| T::narrow(rng.random_range(-1.0..1.0)))
}

pub(crate) fn vector_shape(len: usize) -> Shape {
    Shape::new(len, 1, 1, 1)
}

pub struct Conv2dLayer<T> {
    pub kernels: Tensor4D<T>,
    pub bias: Tensor4D<T>,
    pub stride: usize,
    pub dilation: usize,
}

impl<T: Scalar> Conv2dLayer<T> {
    pub fn random(c_out: usize, c_in: usize, kernel: usize, stride: usize, dilation: usize, seed: u64) -> Self {
        Conv2dLayer {
            kernels: random_tensor(Shape::new(c_out, c_in, kernel, kernel), seed),
            bias: random_tensor(vector_shape(c_out), seed ^ 0xB1A5),
            stride,
            dilation,
        }
    }
}

impl<T: Scalar> Differentiable<T> for Conv2dLayer<T> {
    fn label(&self) -> String {
        let k = self.kernels.shape();
        format!("conv2d {}x{} dilation {}", k.h, k.w, self.dilation)
    }

    fn param_names(&self) -> Vec<String> {
        vec!["kernels".into(), "bias".into()]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4D<T>> {
        vec![&mut self.kernels, &mut self.bias]
    }

    fn forward(&self, input: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        conv2d(input, &self.kernels, self.bias.data(), self.stride, self.dilation)
    }

    fn backward(&self, input: &Tensor4D<T>, grad_output: &Tensor4D<T>) -> Result<(Tensor4D<T>, Vec<Tensor4D<T>>)> {
        let g = conv2d_backward(input, &self.kernels, grad_output, self.stride, self.dilation)?;
        let gb = Tensor4D::new(self.bias.shape(), g.bias)?;
        Ok((g.input, vec![g.kernels, gb]))
    }
}

pub struct TransposedConv2dLayer<T> {
    pub kernels: Tensor4D<T>,
    pub bias: Tensor4D<T>,
}

impl<T: Scalar> TransposedConv2dLayer<T> {
    pub fn random(c_in: usize, c_out: usize, seed: u64) -> Self {
        TransposedConv2dLayer {
            kernels: random_tensor(Shape::new(c_in, c_out, 2, 2), seed),
            bias: random_tensor(vector_shape(c_out), seed ^ 0xB1A5),
        }
    }
}

impl<T: Scalar> Differentiable<T> for TransposedConv2dLayer<T> {
    fn label(&self) -> String {
        "transposed conv2d 2x2 stride 2".into()
    }

    fn param_names(&self) -> Vec<String> {
        vec!["kernels".into(), "bias".into()]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4D<T>> {
        vec![&mut self.kernels, &mut self.bias]
    }

    fn forward(&self, input: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        transposed_conv2d(input, &self.kernels, self.bias.data(), 2)
    }

    fn backward(&self, input: &Tensor4D<T>, grad_output: &Tensor4D<T>) -> Result<(Tensor4D<T>, Vec<Tensor4D<T>>)> {
        let g = transposed_conv2d_backward(input, &self.kernels, grad_output, 2)?;
        let gb = Tensor4D::new(self.bias.shape(), g.bias)?;
        Ok((g.input, vec![g.kernels, gb]))
    }
}

pub struct MaxPool2dLayer;

impl<T: Scalar> Differentiable<T> for MaxPool2dLayer {
    fn label(&self) -> String {
        "maxpool2d 2x2".into()
    }

    fn param_names(&self) -> Vec<String> {
        vec![]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4D<T>> {
        vec![]
    }

    fn forward(&self, input: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        Ok(maxpool2d(input)?.0)
    }

    fn backward(&self, input: &Tensor4D<T>, grad_output: &Tensor4D<T>) -> Result<(Tensor4D<T>, Vec<Tensor4D<T>>)> {
        let (_, idx) = maxpool2d(input)?;
        Ok((maxpool2d_backward(input.shape(), &idx, grad_output)?, vec![]))
    }
}

/// Training-mode batch normalisation (batch statistics, running stats untouched).
pub struct BatchNormLayer<T> {
    pub gamma: Tensor4D<T>,
    pub beta: Tensor4D<T>,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn random(channels: usize, seed: u64) -> Self {
        BatchNormLayer {
            gamma: random_tensor::<T>(vector_shape(channels), seed).map(|v| v + T::narrow(1.5)),
            beta: random_tensor(vector_shape(channels), seed ^ 0xBE7A),
        }
    }
}

impl<T: Scalar> Differentiable<T> for BatchNormLayer<T> {
    fn label(&self) -> String {
        "batchnorm (batch statistics)".into()
    }

    fn param_names(&self) -> Vec<String> {
        vec!["gamma".into(), "beta".into()]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4D<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn forward(&self, input: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        let mut stats = RunningStats::new(input.shape().c);
        let mode = NormMode::Train { update_running: false };
        Ok(batchnorm(input, self.gamma.data(), self.beta.data(), mode, &mut stats)?.0)
    }

    fn backward(&self, input: &Tensor4D<T>, grad_output: &Tensor4D<T>) -> Result<(Tensor4D<T>, Vec<Tensor4D<T>>)> {
        let mut stats = RunningStats::new(input.shape().c);
        let mode = NormMode::Train { update_running: false };
        let (_, cache) = batchnorm(input, self.gamma.data(), self.beta.data(), mode, &mut stats)?;
        let cache = cache.expect("training mode returns a cache");
        let (gi, gg, gb) = batchnorm_backward(grad_output, &cache, self.gamma.data())?;
        let shape = self.gamma.shape();
        Ok((gi, vec![Tensor4D::new(shape, gg)?, Tensor4D::new(shape, gb)?]))
    }
}

pub struct ReluLayer;

impl<T: Scalar> Differentiable<T> for ReluLayer {
    fn label(&self) -> String {
        "relu".into()
    }

    fn param_names(&self) -> Vec<String> {
        vec![]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4D<T>> {
        vec![]
    }

    fn forward(&self, input: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        Ok(relu(input))
    }

    fn backward(&self, input: &Tensor4D<T>, grad_output: &Tensor4D<T>) -> Result<(Tensor4D<T>, Vec<Tensor4D<T>>)> {
        Ok((relu_backward(grad_output, input)?, vec![]))
    }
}

pub struct SigmoidLayer;

impl<T: Scalar> Differentiable<T> for SigmoidLayer {
    fn label(&self) -> String {
        "sigmoid".into()
    }

    fn param_names(&self) -> Vec<String> {
        vec![]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4D<T>> {
        vec![]
    }

    fn forward(&self, input: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        Ok(sigmoid(input))
    }

    fn backward(&self, input: &Tensor4D<T>, grad_output: &Tensor4D<T>) -> Result<(Tensor4D<T>, Vec<Tensor4D<T>>)> {
        Ok((sigmoid_backward(grad_output, &sigmoid(input))?, vec![]))
    }
}

/// Dropout with its mask drawn from a fixed seed on every call.
pub struct DropoutLayer {
    pub rate: f64,
    pub training: bool,
    pub seed: u64,
}

impl DropoutLayer {
    pub fn new(rate: f64, training: bool, seed: u64) -> Self {
        DropoutLayer { rate, training, seed }
    }
}

impl<T: Scalar> Differentiable<T> for DropoutLayer {
    fn label(&self) -> String {
        format!("dropout {} ({})", self.rate, if self.training { "train" } else { "infer" })
    }

    fn is_deterministic(&self) -> bool {
        !self.training || self.rate == 0.0
    }

    fn param_names(&self) -> Vec<String> {
        vec![]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4D<T>> {
        vec![]
    }

    fn forward(&self, input: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        if !self.training {
            return Ok(input.clone());
        }
        Ok(dropout(input, self.rate, &mut ChaCha8Rng::seed_from_u64(self.seed))?.0)
    }

    fn backward(&self, input: &Tensor4D<T>, grad_output: &Tensor4D<T>) -> Result<(Tensor4D<T>, Vec<Tensor4D<T>>)> {
        if !self.training {
            return Ok((grad_output.clone(), vec![]));
        }
        let (_, mask) = dropout(input, self.rate, &mut ChaCha8Rng::seed_from_u64(self.seed))?;
        Ok((dropout_backward(grad_output, &mask)?, vec![]))
    }
}

/// `concat(input, other)` with `other` exposed as a parameter so both
/// branches of the adjoint get checked.
pub struct ConcatLayer<T> {
    pub other: Tensor4D<T>,
}

impl<T: Scalar> Differentiable<T> for ConcatLayer<T> {
    fn label(&self) -> String {
        "concat channels".into()
    }

    fn param_names(&self) -> Vec<String> {
        vec!["upsampled".into()]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4D<T>> {
        vec![&mut self.other]
    }

    fn forward(&self, input: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        concat_channels(input, &self.other)
    }

    fn backward(&self, input: &Tensor4D<T>, grad_output: &Tensor4D<T>) -> Result<(Tensor4D<T>, Vec<Tensor4D<T>>)> {
        let (a, b) = split_channels(grad_output, input.shape().c)?;
        Ok((a, vec![b]))
    }
}

/// `input + other` with `other` exposed as a parameter.
pub struct ResidualAddLayer<T> {
    pub other: Tensor4D<T>,
}

impl<T: Scalar> Differentiable<T> for ResidualAddLayer<T> {
    fn label(&self) -> String {
        "residual add".into()
    }

    fn param_names(&self) -> Vec<String> {
        vec!["skip".into()]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4D<T>> {
        vec![&mut self.other]
    }

    fn forward(&self, input: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        residual_add(input, &self.other)
    }

    fn backward(&self, _input: &Tensor4D<T>, grad_output: &Tensor4D<T>) -> Result<(Tensor4D<T>, Vec<Tensor4D<T>>)> {
        Ok((grad_output.clone(), vec![grad_output.clone()]))
    }
}
