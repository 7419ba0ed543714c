//! U-Net family segmentation of zona-ablated blastocyst images, built from
//! first principles: tensors and hand-written backward passes, the four
//! architectures and their ensembles, the training recipe, a synthetic
//! phantom data generator and the pixel-overlap evaluation protocol.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the storage
//! type to `f32` for everyday use. The `f64` instantiation is what the
//! gradient checks run on.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod numerics;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = numerics::Tensor4D<f32>;
pub type Tensor64 = numerics::Tensor4D<f64>;
