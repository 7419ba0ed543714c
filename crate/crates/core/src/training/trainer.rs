use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::augment::{derive_seed, AugmentParams};
use crate::data::preprocess::normalize;
use crate::data::raster::{Raster, SamplePair};
use crate::error::{Error, Result};
use crate::evaluation::MetricsCounts;
use crate::models::ModelGraph;
use crate::numerics::{Shape, Tensor4D};
use crate::scalar::Scalar;
use crate::training::adam::{AdamState, StepPosition};
use crate::training::config::TrainConfig;
use crate::training::loss::{bce_jaccard_loss, loss_terms};
use crate::training::schedule::{EarlyStopper, PlateauScheduler, StopDecision};

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_jaccard: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::EarlyStop => "early_stop",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.records[self.best_epoch - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_jaccard,lr\n");
        for r in &self.records {
            writeln!(s, "{},{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.val_jaccard, r.lr).expect("string");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Passed to the observer after every epoch.
pub struct EpochReport<'a, T> {
    pub record: &'a EpochRecord,
    /// True when this epoch set a new best validation loss; `model` then
    /// holds the weights that will be returned unless a later epoch beats
    /// them.
    pub improved: bool,
    pub model: &'a ModelGraph<T>,
}

/// Stacks rasters into an `n×1×h×w` tensor.
pub fn stack_rasters<T: Scalar>(rasters: &[&Raster]) -> Result<Tensor4D<T>> {
    let first = rasters
        .first()
        .ok_or_else(|| Error::Precondition("cannot stack zero rasters".into()))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(rasters.len() * h * w);
    for r in rasters {
        first.same_dims(r)?;
        data.extend(r.data().iter().map(|&v| T::narrow(v as f64)));
    }
    Tensor4D::new(Shape::new(rasters.len(), 1, h, w), data)
}

/// Normalised input tensor for a batch of images.
pub fn input_batch<T: Scalar>(images: &[&Raster]) -> Result<Tensor4D<T>> {
    let normed: Vec<Raster> = images.iter().map(|r| normalize(r)).collect();
    stack_rasters(&normed.iter().collect::<Vec<_>>())
}

fn check_sizes<T: Scalar>(model: &ModelGraph<T>, pairs: &[SamplePair], what: &str) -> Result<()> {
    let (h, w) = model.config().input_size;
    for p in pairs {
        if p.image.dims() != (h, w) {
            return Err(Error::Config(format!(
                "{what} pair {} is {}x{}, model expects {w}x{h}",
                p.label(),
                p.image.width(),
                p.image.height()
            )));
        }
    }
    Ok(())
}

/// One forward/backward/Adam step on a batch. Returns the batch loss before
/// the update.
pub fn train_step<T: Scalar>(
    model: &mut ModelGraph<T>,
    state: &mut AdamState,
    x: &Tensor4D<T>,
    y: &Tensor4D<T>,
    lr: f64,
    loss_epsilon: f64,
    rng: Option<&mut ChaCha8Rng>,
    at: StepPosition,
) -> Result<f64> {
    let trace = model.forward_train(x, rng)?;
    let (loss, grad) = bce_jaccard_loss(&trace.probabilities, y, loss_epsilon)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            param: "batch".into(),
            epoch: at.epoch,
            batch: at.batch,
        });
    }
    let (grads, _) = model.backward(&trace, &grad)?;
    drop(trace);
    let names = model.params().names().to_vec();
    state.step(model.params_mut().tensors_mut(), &names, &grads, lr, at)?;
    Ok(loss)
}

/// Validation loss (per-sample average) and micro Jaccard at threshold 0.5,
/// in inference mode.
pub fn validate<T: Scalar>(
    model: &ModelGraph<T>,
    inputs: &[Tensor4D<T>],
    targets: &[Tensor4D<T>],
    loss_epsilon: f64,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    let mut counts = MetricsCounts::default();
    for (x, y) in inputs.iter().zip(targets) {
        let p = model.predict(x)?;
        let n = x.shape().n;
        loss_sum += loss_terms(&p, y, loss_epsilon)?.total() * n as f64;
        count += n;
        counts += MetricsCounts::from_probabilities(p.data(), y.data(), 0.5)?;
    }
    // an empty union means perfect agreement on empty masks
    let jaccard = counts.jaccard().unwrap_or(1.0);
    Ok((loss_sum / count as f64, jaccard))
}

fn batches<T: Scalar>(pairs: &[SamplePair], batch_size: usize) -> Result<(Vec<Tensor4D<T>>, Vec<Tensor4D<T>>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for chunk in pairs.chunks(batch_size) {
        let images: Vec<&Raster> = chunk.iter().map(|p| &p.image).collect();
        let masks: Vec<&Raster> = chunk.iter().map(|p| &p.mask).collect();
        xs.push(input_batch(&images)?);
        ys.push(stack_rasters(&masks)?);
    }
    Ok((xs, ys))
}

/// Trains with the default observer (none). See [`train_with`].
pub fn train<T: Scalar>(
    model: ModelGraph<T>,
    train_set: &[SamplePair],
    val_set: &[SamplePair],
    config: &TrainConfig,
) -> Result<(ModelGraph<T>, TrainHistory)> {
    train_with(model, train_set, val_set, config, |_| Ok(()))
}

/// Epoch loop: seeded reshuffle, minibatches (the last may be short),
/// optional augmentation, Adam, then validation in inference mode feeding
/// the plateau scheduler and the early stopper. Returns the weights of the
/// epoch with the lowest validation loss.
pub fn train_with<T: Scalar>(
    mut model: ModelGraph<T>,
    train_set: &[SamplePair],
    val_set: &[SamplePair],
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochReport<'_, T>) -> Result<()>,
) -> Result<(ModelGraph<T>, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty train and validation sets, got {} and {}",
            train_set.len(),
            val_set.len()
        )));
    }
    check_sizes(&model, train_set, "training")?;
    check_sizes(&model, val_set, "validation")?;
    model.set_dropout_rate(config.dropout_rate)?;

    let (val_x, val_y) = batches::<T>(val_set, config.batch_size)?;
    let plain_inputs: Vec<Raster> = train_set.iter().map(|p| normalize(&p.image)).collect();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);

    let mut adam = AdamState::new(model.params());
    let mut scheduler = PlateauScheduler::new(config.initial_lr, config.lr_factor, config.lr_patience_epochs, config.min_lr);
    let mut stopper = EarlyStopper::new(config.early_stop_patience);
    let mut best: Option<(f64, usize, ModelGraph<T>)> = None;
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        let lr = scheduler.lr();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let (inputs, masks): (Vec<Raster>, Vec<Raster>) = if config.augment {
                idx.iter()
                    .map(|&i| {
                        let t = AugmentParams::from_seed(derive_seed(config.seed, &[epoch as u64, i as u64]));
                        let p = t.apply_pair(&train_set[i]);
                        (normalize(&p.image), p.mask)
                    })
                    .unzip()
            } else {
                idx.iter()
                    .map(|&i| (plain_inputs[i].clone(), train_set[i].mask.clone()))
                    .unzip()
            };
            let x = stack_rasters::<T>(&inputs.iter().collect::<Vec<_>>())?;
            let y = stack_rasters::<T>(&masks.iter().collect::<Vec<_>>())?;
            let at = StepPosition { epoch, batch: b + 1 };
            let loss = train_step(&mut model, &mut adam, &x, &y, lr, config.loss_epsilon, Some(&mut dropout_rng), at)?;
            loss_sum += loss * idx.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_jaccard) = validate(&model, &val_x, &val_y, config.loss_epsilon)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite {
                what: "validation loss",
                param: "model".into(),
                epoch,
                batch: 0,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_jaccard,
            lr,
        };
        let improved = best.as_ref().is_none_or(|(l, _, _)| val_loss < *l);
        if improved {
            best = Some((val_loss, epoch, model.clone()));
        }
        observer(&EpochReport {
            record: &record,
            improved,
            model: &model,
        })?;
        records.push(record);
        scheduler.observe(val_loss);
        if stopper.observe(epoch, val_loss) == StopDecision::Stop {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok((
        best_model,
        TrainHistory {
            records,
            stop_reason,
            best_epoch,
        },
    ))
}
