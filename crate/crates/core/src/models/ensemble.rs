use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::graph::{Architecture, ModelGraph};
use crate::numerics::Tensor4D;
use crate::scalar::Scalar;

/// Members of the three-network ensemble.
pub const ENSEMBLE_MEMBERS: [Architecture; 3] = [Architecture::UNet, Architecture::ResUNet, Architecture::RdUNet];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnsembleScheme {
    Unweighted,
    /// Weights proportional to each member's validation Jaccard index.
    Weighted,
}

impl EnsembleScheme {
    pub fn name(&self) -> &'static str {
        match self {
            EnsembleScheme::Unweighted => "ensemble_unweighted",
            EnsembleScheme::Weighted => "ensemble_weighted",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            EnsembleScheme::Unweighted => "Unweighted ensemble",
            EnsembleScheme::Weighted => "Weighted ensemble",
        }
    }
}

impl fmt::Display for EnsembleScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnsembleScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "unweighted" | "ensemble_unweighted" => Ok(EnsembleScheme::Unweighted),
            "weighted" | "ensemble_weighted" => Ok(EnsembleScheme::Weighted),
            _ => Err(Error::Config(format!("unknown ensemble scheme {s:?}"))),
        }
    }
}

/// Scales nonnegative scores to unit sum.
pub fn normalize_weights(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::Config(format!("ensemble weight {bad} is not a nonnegative finite number")));
    }
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("ensemble weights sum to zero".into()));
    }
    Ok(scores.iter().map(|s| s / total).collect())
}

/// Pixelwise average of probability maps.
///
/// Without weights this is `Σp / n`; with weights it is `Σ wᵢ pᵢ` (weights
/// must already sum to 1). Accumulation is in f64 and the result is clamped
/// to the pointwise member range, so it never leaves the hull of its inputs.
pub fn combine_maps<T: Scalar>(maps: &[Tensor4D<T>], weights: Option<&[f64]>) -> Result<Tensor4D<T>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Config("ensemble needs at least one member".into()))?;
    let shape = first.shape();
    for m in maps {
        m.shape().expect(&shape)?;
    }
    if let Some(w) = weights {
        if w.len() != maps.len() {
            return Err(Error::dim("ensemble weights", maps.len(), w.len()));
        }
        let total: f64 = w.iter().sum();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("ensemble weights {w:?} must be nonnegative and sum to 1")));
        }
    }
    let n = maps.len() as f64;
    let data = (0..shape.len())
        .map(|i| {
            let mut acc = 0.0f64;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (k, m) in maps.iter().enumerate() {
                let p = m.data()[i].widen();
                acc += match weights {
                    Some(w) => w[k] * p,
                    None => p,
                };
                lo = lo.min(p);
                hi = hi.max(p);
            }
            let mean = if weights.is_some() { acc } else { acc / n };
            T::narrow(mean.clamp(lo, hi))
        })
        .collect();
    Tensor4D::new(shape, data)
}

/// Members and their (unit-sum) weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec<T> {
    pub scheme: EnsembleScheme,
    members: Vec<ModelGraph<T>>,
    weights: Vec<f64>,
}

impl<T: Scalar> EnsembleSpec<T> {
    pub fn unweighted(members: Vec<ModelGraph<T>>) -> Result<Self> {
        let weights = normalize_weights(&vec![1.0; members.len()])?;
        Ok(EnsembleSpec {
            scheme: EnsembleScheme::Unweighted,
            members,
            weights,
        })
    }

    /// `jaccards[i]` is member `i`'s Jaccard index on held-out validation data.
    pub fn weighted(members: Vec<ModelGraph<T>>, jaccards: &[f64]) -> Result<Self> {
        if members.len() != jaccards.len() {
            return Err(Error::dim("ensemble weights", members.len(), jaccards.len()));
        }
        let weights = normalize_weights(jaccards)?;
        Ok(EnsembleSpec {
            scheme: EnsembleScheme::Weighted,
            members,
            weights,
        })
    }

    pub fn members(&self) -> &[ModelGraph<T>] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn predict(&self, batch: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        let maps = self
            .members
            .iter()
            .map(|m| m.predict(batch))
            .collect::<Result<Vec<_>>>()?;
        ensemble_combine(self.scheme, &maps, &self.weights)
    }
}

fn ensemble_combine<T: Scalar>(scheme: EnsembleScheme, maps: &[Tensor4D<T>], weights: &[f64]) -> Result<Tensor4D<T>> {
    match scheme {
        EnsembleScheme::Unweighted => combine_maps(maps, None),
        EnsembleScheme::Weighted => combine_maps(maps, Some(weights)),
    }
}

pub fn ensemble_predict<T: Scalar>(spec: &EnsembleSpec<T>, batch: &Tensor4D<T>) -> Result<Tensor4D<T>> {
    spec.predict(batch)
}
