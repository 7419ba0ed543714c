//! Overlap metrics, test-set evaluation, the threshold sweep and overlays.

pub mod metrics;
pub mod overlay;
pub mod testset;

pub use metrics::{
    binarize, confusion, dice_from_jaccard, macro_average, metrics, micro_aggregate, MetricsCounts, MetricsReport,
    PredictionCategory, Scope,
};
pub use overlay::{caption, contour, render_overlay};
pub use testset::{
    evaluate_maps, evaluate_testset, predict_native, sweep_maps, threshold_sweep, CategoryHistogram, ImageResult,
    Segmenter, SweepTable, TestsetReport, SWEEP_GRID,
};
