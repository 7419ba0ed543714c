use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{RunningStats, Tensor4D};
use crate::scalar::Scalar;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Index of a batch-norm running-statistics slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NormId(pub(crate) usize);

/// Named trainable tensors plus the non-trainable batch-norm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor4D<T>>,
    norm_names: Vec<String>,
    norms: Vec<RunningStats<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            norm_names: Vec::new(),
            norms: Vec::new(),
        }
    }

    pub(crate) fn add(&mut self, name: String, tensor: Tensor4D<T>) -> ParamId {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub(crate) fn add_norm(&mut self, name: String, channels: usize) -> NormId {
        self.norm_names.push(name);
        self.norms.push(RunningStats::new(channels));
        NormId(self.norms.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor4D<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor4D<T> {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor4D<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor4D<T>] {
        &mut self.tensors
    }

    pub fn norms(&self) -> &[RunningStats<T>] {
        &self.norms
    }

    pub fn norm_names(&self) -> &[String] {
        &self.norm_names
    }

    pub(crate) fn split_mut(&mut self) -> (&[Tensor4D<T>], &mut [RunningStats<T>]) {
        (&self.tensors, &mut self.norms)
    }

    pub fn norm(&self, id: NormId) -> &RunningStats<T> {
        &self.norms[id.0]
    }

    pub fn norm_mut(&mut self, id: NormId) -> &mut RunningStats<T> {
        &mut self.norms[id.0]
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor4D<T>> {
        self.tensors.iter().map(|t| Tensor4D::zeros(t.shape())).collect()
    }

    pub fn is_calibrated(&self) -> bool {
        self.norms.iter().all(|n| n.calibrated)
    }

    /// Flat `(name, tensor)` export including running statistics of calibrated
    /// norms (`<name>.running_mean`, `<name>.running_var`).
    pub fn export(&self) -> Vec<(String, Tensor4D<T>)> {
        let mut out: Vec<(String, Tensor4D<T>)> = self
            .names
            .iter()
            .cloned()
            .zip(self.tensors.iter().cloned())
            .collect();
        for (name, stats) in self.norm_names.iter().zip(&self.norms) {
            if !stats.calibrated {
                continue;
            }
            let shape = crate::numerics::layers::vector_shape(stats.channels());
            out.push((format!("{name}.running_mean"), Tensor4D::new(shape, stats.mean.clone()).expect("sized")));
            out.push((format!("{name}.running_var"), Tensor4D::new(shape, stats.var.clone()).expect("sized")));
        }
        out
    }

    /// Loads values exported by [`ParamStore::export`]; every trainable
    /// tensor must be present with a matching shape.
    pub fn import(&mut self, tensors: &[(String, Tensor4D<T>)]) -> Result<()> {
        let by_name: HashMap<&str, &Tensor4D<T>> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (name, slot) in self.names.iter().zip(self.tensors.iter_mut()) {
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            t.shape()
                .expect(&slot.shape())
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            *slot = (*t).clone();
        }
        for (name, stats) in self.norm_names.iter().zip(self.norms.iter_mut()) {
            let mean = by_name.get(format!("{name}.running_mean").as_str()).copied();
            let var = by_name.get(format!("{name}.running_var").as_str()).copied();
            match (mean, var) {
                (Some(m), Some(v)) if m.len() == stats.channels() && v.len() == stats.channels() => {
                    stats.mean = m.data().to_vec();
                    stats.var = v.data().to_vec();
                    stats.calibrated = true;
                }
                (None, None) => stats.calibrated = false,
                _ => return Err(Error::Checkpoint(format!("inconsistent running statistics for {name}"))),
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            norm_names: self.norm_names.clone(),
            norms: self
                .norms
                .iter()
                .map(|s| RunningStats {
                    mean: s.mean.iter().map(|v| U::narrow(v.widen())).collect(),
                    var: s.var.iter().map(|v| U::narrow(v.widen())).collect(),
                    momentum: s.momentum,
                    epsilon: s.epsilon,
                    calibrated: s.calibrated,
                })
                .collect(),
        }
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}
