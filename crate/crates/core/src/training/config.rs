use serde::{Deserialize, Serialize};

use crate::data::split::VALIDATION_FRACTION;
use crate::error::{Error, Result};
use crate::models::DEFAULT_DROPOUT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub initial_lr: f64,
    pub lr_factor: f64,
    pub lr_patience_epochs: usize,
    pub min_lr: f64,
    pub early_stop_patience: usize,
    pub dropout_rate: f64,
    pub loss_epsilon: f64,
    pub seed: u64,
    /// Fresh random flips, rotation, shift and zoom for every sample in
    /// every epoch.
    pub augment: bool,
    /// Share of the training set held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            max_epochs: 200,
            initial_lr: 1e-4,
            lr_factor: 0.95,
            lr_patience_epochs: 5,
            min_lr: 1e-6,
            early_stop_patience: 15,
            dropout_rate: DEFAULT_DROPOUT,
            loss_epsilon: 1.0,
            seed: 0,
            augment: true,
            validation_fraction: VALIDATION_FRACTION,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be at least 1".into());
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("initial_lr {} must be positive", self.initial_lr));
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.initial_lr) {
            return bad(format!("min_lr {} must lie in (0, initial_lr]", self.min_lr));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor {} outside (0, 1)", self.lr_factor));
        }
        if self.lr_patience_epochs == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.loss_epsilon >= 0.0 && self.loss_epsilon.is_finite()) {
            return bad(format!("loss_epsilon {} must be non-negative", self.loss_epsilon));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction {} outside (0, 1)", self.validation_fraction));
        }
        Ok(())
    }
}
