//! [`Differentiable`] adapters so whole blocks and models can go through the
//! finite-difference checker. Batch statistics are used without updating the
//! running statistics, and dropout is off.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::blocks::{Ctx, Norms, ResidualUnit};
use crate::models::graph::ModelGraph;
use crate::models::params::ParamStore;
use crate::numerics::{Differentiable, Tensor4D};
use crate::scalar::Scalar;

/// A single residual unit with its own parameters.
pub struct ResidualUnitProbe<T> {
    pub store: ParamStore<T>,
    pub unit: ResidualUnit,
}

impl<T: Scalar> ResidualUnitProbe<T> {
    /// Random affine parameters so the check does not sit on the
    /// gamma = 1, beta = 0 special case.
    pub fn random(in_channels: usize, out_channels: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = ResidualUnit::build(&mut store, &mut rng, "probe", in_channels, out_channels);
        for (name, t) in store.names().to_vec().iter().zip(store.tensors_mut()) {
            if name.ends_with(".gamma") || name.ends_with(".beta") || name.ends_with(".bias") {
                let r = crate::numerics::layers::random_tensor::<T>(t.shape(), seed ^ name.len() as u64);
                let offset = if name.ends_with(".gamma") { 1.0 } else { 0.0 };
                *t = r.map(|v| T::narrow(offset + 0.5 * v.widen()));
            }
        }
        ResidualUnitProbe { store, unit }
    }

    pub fn forward_with(&self, x: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        let mut scratch = self.store.norms().to_vec();
        let mut ctx = Ctx {
            params: self.store.tensors(),
            norms: Norms::Batch {
                stats: &mut scratch,
                update_running: false,
            },
            rng: None,
            dropout_rate: 0.0,
        };
        Ok(self.unit.forward(&mut ctx, x.clone())?.0)
    }
}

impl<T: Scalar> Differentiable<T> for ResidualUnitProbe<T> {
    fn label(&self) -> String {
        format!(
            "residual unit {}->{}",
            self.unit.first.norm.channels,
            self.unit.out_channels()
        )
    }

    fn param_names(&self) -> Vec<String> {
        self.store.names().to_vec()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4D<T>> {
        self.store.tensors_mut().iter_mut().collect()
    }

    fn forward(&self, input: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        self.forward_with(input)
    }

    fn backward(&self, input: &Tensor4D<T>, grad_output: &Tensor4D<T>) -> Result<(Tensor4D<T>, Vec<Tensor4D<T>>)> {
        let mut scratch = self.store.norms().to_vec();
        let mut ctx = Ctx {
            params: self.store.tensors(),
            norms: Norms::Batch {
                stats: &mut scratch,
                update_running: false,
            },
            rng: None,
            dropout_rate: 0.0,
        };
        let (_, cache) = self.unit.forward(&mut ctx, input.clone())?;
        let mut grads = self.store.zeros_like();
        let gi = self
            .unit
            .backward(self.store.tensors(), &cache, grad_output.clone(), &mut grads)?;
        Ok((gi, grads))
    }
}

/// A whole model mapping an image batch to its probability map.
pub struct ModelProbe<T> {
    pub model: ModelGraph<T>,
}

impl<T: Scalar> Differentiable<T> for ModelProbe<T> {
    fn label(&self) -> String {
        format!("{} model", self.model.architecture())
    }

    fn param_names(&self) -> Vec<String> {
        self.model.params().names().to_vec()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4D<T>> {
        self.model.params_mut().tensors_mut().iter_mut().collect()
    }

    fn forward(&self, input: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        Ok(self.model.forward_batch_stats(input)?.probabilities)
    }

    fn backward(&self, input: &Tensor4D<T>, grad_output: &Tensor4D<T>) -> Result<(Tensor4D<T>, Vec<Tensor4D<T>>)> {
        let trace = self.model.forward_batch_stats(input)?;
        let (grads, gi) = self.model.backward(&trace, grad_output)?;
        Ok((gi, grads))
    }
}
