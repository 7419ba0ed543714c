use std::fmt;
use std::ops::{Add, AddAssign};

use serde::Serialize;

use crate::data::raster::Raster;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pixel confusion counts, foreground positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct MetricsCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl MetricsCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        MetricsCounts { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    #[inline]
    fn push(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    /// Counts from a probability map thresholded at `threshold` (positive
    /// iff `p ≥ threshold`) against a 0/1 target.
    pub fn from_probabilities<T: Scalar>(probs: &[T], target: &[T], threshold: f64) -> Result<Self> {
        if probs.len() != target.len() {
            return Err(Error::dim("pixel count", target.len(), probs.len()));
        }
        let mut c = MetricsCounts::default();
        for (&p, &g) in probs.iter().zip(target) {
            c.push(p.widen() >= threshold, g.widen() >= 0.5);
        }
        Ok(c)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn dice(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn jaccard(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }
}

impl Add for MetricsCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        MetricsCounts::new(self.tp + o.tp, self.tn + o.tn, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl AddAssign for MetricsCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for MetricsCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(MetricsCounts::default(), Add::add)
    }
}

/// Positive iff `p ≥ threshold`.
pub fn binarize(probs: &Raster, threshold: f64) -> Result<Raster> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(crate::data::preprocess::binarize_raster(probs, threshold))
}

/// Exact pixel counts of a binary prediction against a binary ground truth.
pub fn confusion(pred: &Raster, gt: &Raster) -> Result<MetricsCounts> {
    pred.same_dims(gt)?;
    let mut c = MetricsCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        c.push(p >= 0.5, g >= 0.5);
    }
    Ok(c)
}

/// Dice implied by a Jaccard index.
pub fn dice_from_jaccard(j: f64) -> f64 {
    2.0 * j / (j + 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    PerImage,
    MicroAggregate,
    MacroAverage,
}

impl Scope {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scope::PerImage => "per_image",
            Scope::MicroAggregate => "micro_aggregate",
            Scope::MacroAverage => "macro_average",
        }
    }
}

/// The five overlap metrics. `None` marks a ratio whose denominator was
/// zero; for macro averages `skipped` counts such entries per metric in the
/// order accuracy, precision, recall, dice, jaccard.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub dice: Option<f64>,
    pub jaccard: Option<f64>,
    pub scope: Scope,
    pub skipped: [usize; 5],
}

impl MetricsReport {
    pub fn values(&self) -> [Option<f64>; 5] {
        [self.accuracy, self.precision, self.recall, self.dice, self.jaccard]
    }

    pub fn category(&self) -> Option<PredictionCategory> {
        self.jaccard.map(PredictionCategory::from_jaccard)
    }
}

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "precision", "recall", "dice", "jaccard"];

fn from_counts(c: &MetricsCounts, scope: Scope) -> Result<MetricsReport> {
    if c.total() == 0 {
        return Err(Error::Validation("metrics of zero pixels".into()));
    }
    Ok(MetricsReport {
        accuracy: c.accuracy(),
        precision: c.precision(),
        recall: c.recall(),
        dice: c.dice(),
        jaccard: c.jaccard(),
        scope,
        skipped: [0; 5],
    })
}

/// Per-image metrics of one set of counts.
pub fn metrics(c: &MetricsCounts) -> Result<MetricsReport> {
    from_counts(c, Scope::PerImage)
}

/// Metrics of the summed counts.
pub fn micro_aggregate(counts: &[MetricsCounts]) -> Result<MetricsReport> {
    from_counts(&counts.iter().copied().sum(), Scope::MicroAggregate)
}

/// Mean of per-image metrics, skipping undefined entries.
pub fn macro_average(reports: &[MetricsReport]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::Config("macro average of no images".into()));
    }
    let mut out = [None; 5];
    let mut skipped = [0; 5];
    for k in 0..5 {
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.values()[k]).collect();
        skipped[k] = reports.len() - vals.len();
        if !vals.is_empty() {
            out[k] = Some(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    Ok(MetricsReport {
        accuracy: out[0],
        precision: out[1],
        recall: out[2],
        dice: out[3],
        jaccard: out[4],
        scope: Scope::MacroAverage,
        skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionCategory {
    Best,
    Better,
    Fair,
    BelowFair,
}

impl PredictionCategory {
    pub const ALL: [PredictionCategory; 4] = [Self::Best, Self::Better, Self::Fair, Self::BelowFair];

    /// Jaccard above 0.97 is best, 0.95 to 0.97 better, 0.90 up to 0.95 fair.
    pub fn from_jaccard(j: f64) -> Self {
        if j > 0.97 {
            Self::Best
        } else if j >= 0.95 {
            Self::Better
        } else if j >= 0.90 {
            Self::Fair
        } else {
            Self::BelowFair
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Best => "best",
            Self::Better => "better",
            Self::Fair => "fair",
            Self::BelowFair => "below_fair",
        }
    }
}

impl fmt::Display for PredictionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
