use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::preprocess::{binarize_raster, resize, ResizeKind};
use crate::data::raster::{Raster, SamplePair};
use crate::error::{Error, Result};
use crate::evaluation::metrics::{
    confusion, macro_average, metrics, micro_aggregate, MetricsCounts, MetricsReport, PredictionCategory, METRIC_NAMES,
};
use crate::models::{EnsembleSpec, ModelGraph};
use crate::numerics::Tensor4D;
use crate::training::input_batch;

/// Anything that maps a normalised input batch to foreground probabilities.
pub trait Segmenter {
    fn name(&self) -> String;
    /// `(height, width)` the segmenter works at.
    fn input_size(&self) -> (usize, usize);
    fn predict_probabilities(&self, batch: &Tensor4D<f32>) -> Result<Tensor4D<f32>>;
}

impl Segmenter for ModelGraph<f32> {
    fn name(&self) -> String {
        self.architecture().name().to_string()
    }

    fn input_size(&self) -> (usize, usize) {
        self.config().input_size
    }

    fn predict_probabilities(&self, batch: &Tensor4D<f32>) -> Result<Tensor4D<f32>> {
        self.predict(batch)
    }
}

impl Segmenter for EnsembleSpec<f32> {
    fn name(&self) -> String {
        self.scheme.name().to_string()
    }

    fn input_size(&self) -> (usize, usize) {
        self.members()[0].config().input_size
    }

    fn predict_probabilities(&self, batch: &Tensor4D<f32>) -> Result<Tensor4D<f32>> {
        self.predict(batch)
    }
}

pub const DEFAULT_BATCH: usize = 16;

/// Probability maps at each image's own resolution: resize to the working
/// size (bilinear), normalise, predict, and resize the probabilities back
/// (bilinear). Thresholding happens afterwards at native size.
pub fn predict_native(model: &dyn Segmenter, images: &[&Raster], batch_size: usize) -> Result<Vec<Raster>> {
    let (h, w) = model.input_size();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let working: Vec<Raster> = chunk.iter().map(|r| resize(r, w, h, ResizeKind::Image)).collect();
        let x = input_batch::<f32>(&working.iter().collect::<Vec<_>>())?;
        let p = model.predict_probabilities(&x)?;
        for (i, native) in chunk.iter().enumerate() {
            let map = Raster::from_plane(&p, i, 0);
            out.push(resize(&map, native.width(), native.height(), ResizeKind::Image));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageResult {
    pub source_id: String,
    pub frame: usize,
    pub threshold: f64,
    pub counts: MetricsCounts,
    pub report: MetricsReport,
}

impl ImageResult {
    pub fn category(&self) -> Option<PredictionCategory> {
        self.report.category()
    }
}

/// Counts of images per category plus images whose Jaccard was undefined.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CategoryHistogram {
    pub counts: BTreeMap<PredictionCategory, usize>,
    pub undefined: usize,
}

impl CategoryHistogram {
    pub fn from_results(results: &[ImageResult]) -> Self {
        let mut h = CategoryHistogram::default();
        for c in PredictionCategory::ALL {
            h.counts.insert(c, 0);
        }
        for r in results {
            match r.category() {
                Some(c) => *h.counts.get_mut(&c).expect("all categories present") += 1,
                None => h.undefined += 1,
            }
        }
        h
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum::<usize>() + self.undefined
    }

    pub fn count(&self, c: PredictionCategory) -> usize {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    pub fn fraction(&self, c: PredictionCategory) -> f64 {
        self.count(c) as f64 / self.total().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestsetReport {
    pub model: String,
    pub threshold: f64,
    pub images: Vec<ImageResult>,
    pub micro: MetricsReport,
    pub macro_avg: MetricsReport,
    pub categories: CategoryHistogram,
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

impl TestsetReport {
    /// One row per image.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,frame,threshold,tp,tn,fp,fn,");
        s.push_str(&METRIC_NAMES.join(","));
        s.push_str(",category\n");
        for r in &self.images {
            let c = r.counts;
            write!(s, "{},{},{},{},{},{},{}", r.source_id, r.frame, r.threshold, c.tp, c.tn, c.fp, c.fn_).expect("string");
            for v in r.report.values() {
                write!(s, ",{}", fmt_metric(v)).expect("string");
            }
            let cat = r.category().map_or("undefined", |c| c.as_str());
            writeln!(s, ",{cat}").expect("string");
        }
        s
    }

    /// Micro and macro metrics, then the category histogram.
    pub fn summary_csv(&self) -> String {
        let mut s = format!("model,{}\nthreshold,{}\nimages,{}\n", self.model, self.threshold, self.images.len());
        s.push_str("scope,");
        s.push_str(&METRIC_NAMES.join(","));
        s.push_str(",skipped\n");
        for r in [&self.micro, &self.macro_avg] {
            s.push_str(r.scope.as_str());
            for v in r.values() {
                write!(s, ",{}", fmt_metric(v)).expect("string");
            }
            writeln!(s, ",{}", r.skipped.iter().sum::<usize>()).expect("string");
        }
        s.push_str("category,count,fraction\n");
        for c in PredictionCategory::ALL {
            writeln!(s, "{},{},{:.4}", c, self.categories.count(c), self.categories.fraction(c)).expect("string");
        }
        if self.categories.undefined > 0 {
            writeln!(s, "undefined,{},", self.categories.undefined).expect("string");
        }
        s
    }

    /// Writes `<stem>.csv` and `<stem>_summary.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        std::fs::write(dir.join(format!("{stem}_summary.csv")), self.summary_csv())?;
        Ok(())
    }
}

/// Scores native-resolution probability maps against their pairs.
pub fn evaluate_maps(model: &str, pairs: &[SamplePair], maps: &[Raster], threshold: f64) -> Result<TestsetReport> {
    if pairs.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    if pairs.len() != maps.len() {
        return Err(Error::dim("probability maps", pairs.len(), maps.len()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut images = Vec::with_capacity(pairs.len());
    for (p, m) in pairs.iter().zip(maps) {
        let counts = confusion(&binarize_raster(m, threshold), &p.mask)?;
        images.push(ImageResult {
            source_id: p.source_id.clone(),
            frame: p.frame_index,
            threshold,
            counts,
            report: metrics(&counts)?,
        });
    }
    let counts: Vec<MetricsCounts> = images.iter().map(|r| r.counts).collect();
    let reports: Vec<MetricsReport> = images.iter().map(|r| r.report).collect();
    Ok(TestsetReport {
        model: model.to_string(),
        threshold,
        micro: micro_aggregate(&counts)?,
        macro_avg: macro_average(&reports)?,
        categories: CategoryHistogram::from_results(&images),
        images,
    })
}

/// Predicts every test pair at working size, restores to native size and
/// scores at `threshold`.
pub fn evaluate_testset(model: &dyn Segmenter, test_set: &[SamplePair], threshold: f64) -> Result<TestsetReport> {
    if test_set.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    let images: Vec<&Raster> = test_set.iter().map(|p| &p.image).collect();
    let maps = predict_native(model, &images, DEFAULT_BATCH)?;
    evaluate_maps(&model.name(), test_set, &maps, threshold)
}

pub const SWEEP_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const INSENSITIVE_BAND: [f64; 3] = [0.4, 0.5, 0.6];
/// Largest micro-Jaccard spread over the band that still counts as flat.
pub const INSENSITIVITY_TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    /// `(threshold, micro Jaccard)`; `None` when every image and prediction
    /// is empty.
    pub rows: Vec<(f64, Option<f64>)>,
    pub best_threshold: f64,
    /// Max minus min micro Jaccard over 0.4, 0.5 and 0.6.
    pub band_spread: f64,
    pub insensitive: bool,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,micro_jaccard\n");
        for (t, j) in &self.rows {
            writeln!(s, "{t},{}", fmt_metric(*j)).expect("string");
        }
        writeln!(s, "best_threshold,{}", self.best_threshold).expect("string");
        writeln!(s, "band_spread,{:.6}", self.band_spread).expect("string");
        writeln!(s, "insensitive,{}", self.insensitive).expect("string");
        s
    }
}

/// Micro Jaccard of `maps` against `masks` over a threshold grid. The
/// grid must contain 0.4, 0.5 and 0.6 for the insensitivity flag.
pub fn sweep_maps(maps: &[Raster], masks: &[&Raster], grid: &[f64]) -> Result<SweepTable> {
    if maps.is_empty() || maps.len() != masks.len() {
        return Err(Error::dim("probability maps", masks.len(), maps.len()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &t in grid {
        let mut total = MetricsCounts::default();
        for (m, g) in maps.iter().zip(masks) {
            total += MetricsCounts::from_probabilities(m.data(), g.data(), t)?;
        }
        rows.push((t, total.jaccard()));
    }
    // first threshold wins ties
    let best_threshold = rows
        .iter()
        .fold(None::<(f64, f64)>, |acc, &(t, j)| match (acc, j) {
            (None, Some(j)) => Some((t, j)),
            (Some((_, bj)), Some(j)) if j > bj => Some((t, j)),
            _ => acc,
        })
        .map_or(0.5, |(t, _)| t);
    let band: Vec<f64> = INSENSITIVE_BAND
        .iter()
        .map(|b| {
            rows.iter()
                .find(|(t, _)| (t - b).abs() < 1e-9)
                .and_then(|(_, j)| *j)
                .ok_or_else(|| Error::Config(format!("sweep grid lacks a defined value at {b}")))
        })
        .collect::<Result<_>>()?;
    let hi = band.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = band.iter().cloned().fold(f64::INFINITY, f64::min);
    let band_spread = hi - lo;
    Ok(SweepTable {
        rows,
        best_threshold,
        band_spread,
        insensitive: band_spread < INSENSITIVITY_TOLERANCE,
    })
}

/// Threshold sweep over [`SWEEP_GRID`] on native-resolution predictions.
pub fn threshold_sweep(model: &dyn Segmenter, pairs: &[SamplePair]) -> Result<SweepTable> {
    let images: Vec<&Raster> = pairs.iter().map(|p| &p.image).collect();
    let maps = predict_native(model, &images, DEFAULT_BATCH)?;
    let masks: Vec<&Raster> = pairs.iter().map(|p| &p.mask).collect();
    sweep_maps(&maps, &masks, &SWEEP_GRID)
}
