//! Rank-4 tensors and the per-layer forward/backward passes the U-Net
//! family needs, plus finite-difference verification and checkpoints.

pub mod checkpoint;
pub mod conv;
mod direct;
pub mod elementwise;
pub mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod norm;
pub mod pool;
pub mod tensor;

use std::fmt;

use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use conv::{conv2d, conv2d_backward, transposed_conv2d, transposed_conv2d_backward, ConvGeometry, ConvGrads};
pub use elementwise::{
    concat_channels, dropout, dropout_backward, relu, relu_backward, residual_add, sigmoid, sigmoid_backward,
    split_channels,
};
pub use gradcheck::{finite_difference_check, finite_difference_check_sampled, Differentiable, GradCheckReport};
pub use norm::{batchnorm, batchnorm_backward, batchnorm_infer, NormCache, NormMode, RunningStats};
pub use pool::{maxpool2d, maxpool2d_backward};
pub use tensor::{Shape, Tensor4D};

/// Dilation rates of the five-layer dilated bridge.
pub const BRIDGE_DILATIONS: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    TransposedConv2d,
    MaxPool2d,
    BatchNorm,
    Relu,
    Sigmoid,
    Dropout,
    Concat,
    Add,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::TransposedConv2d => "transposed_conv2d",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Dropout => "dropout",
            LayerKind::Concat => "concat",
            LayerKind::Add => "add",
        }
    }
}

/// Static description of one layer in a model graph.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub out_channels: usize,
    pub dropout_rate: f64,
}

impl LayerSpec {
    fn plain(kind: LayerKind, out_channels: usize) -> Self {
        LayerSpec {
            kind,
            kernel: 0,
            stride: 1,
            dilation: 1,
            out_channels,
            dropout_rate: 0.0,
        }
    }

    pub fn conv(kernel: usize, dilation: usize, out_channels: usize) -> Self {
        LayerSpec {
            kernel,
            dilation,
            ..Self::plain(LayerKind::Conv2d, out_channels)
        }
    }

    pub fn up_conv(out_channels: usize) -> Self {
        LayerSpec {
            kernel: 2,
            stride: 2,
            ..Self::plain(LayerKind::TransposedConv2d, out_channels)
        }
    }

    pub fn max_pool(channels: usize) -> Self {
        LayerSpec {
            kernel: 2,
            stride: 2,
            ..Self::plain(LayerKind::MaxPool2d, channels)
        }
    }

    pub fn batch_norm(channels: usize) -> Self {
        Self::plain(LayerKind::BatchNorm, channels)
    }

    pub fn relu(channels: usize) -> Self {
        Self::plain(LayerKind::Relu, channels)
    }

    pub fn sigmoid(channels: usize) -> Self {
        Self::plain(LayerKind::Sigmoid, channels)
    }

    pub fn dropout(channels: usize, rate: f64) -> Self {
        LayerSpec {
            dropout_rate: rate,
            ..Self::plain(LayerKind::Dropout, channels)
        }
    }

    pub fn concat(channels: usize) -> Self {
        Self::plain(LayerKind::Concat, channels)
    }

    pub fn add(channels: usize) -> Self {
        Self::plain(LayerKind::Add, channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilation == 0 || self.stride == 0 {
            return Err(Error::Config(format!("{}: stride and dilation must be >= 1", self.kind.as_str())));
        }
        if self.dilation > 1 && self.kind != LayerKind::Conv2d {
            return Err(Error::Config(format!("{} cannot be dilated", self.kind.as_str())));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} out={}", self.kind.as_str(), self.out_channels)?;
        match self.kind {
            LayerKind::Conv2d => write!(f, " kernel={}x{0} stride={} dilation={}", self.kernel, self.stride, self.dilation),
            LayerKind::TransposedConv2d | LayerKind::MaxPool2d => {
                write!(f, " kernel={}x{0} stride={}", self.kernel, self.stride)
            }
            LayerKind::Dropout => write!(f, " rate={}", self.dropout_rate),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_convolutions_dilate() {
        assert!(LayerSpec::conv(3, 16, 8).validate().is_ok());
        let mut pool = LayerSpec::max_pool(8);
        pool.dilation = 2;
        assert!(pool.validate().is_err());
        assert!(LayerSpec::dropout(8, 1.0).validate().is_err());
    }

    #[test]
    fn display_is_single_line() {
        assert_eq!(LayerSpec::conv(3, 4, 32).to_string(), "conv2d out=32 kernel=3x3 stride=1 dilation=4");
        assert_eq!(LayerSpec::up_conv(16).to_string(), "transposed_conv2d out=16 kernel=2x2 stride=2");
    }
}
