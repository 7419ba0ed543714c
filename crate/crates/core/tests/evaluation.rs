use proptest::prelude::*;

use blastoseg::data::{Raster, SamplePair};
use blastoseg::evaluation::{
    binarize, caption, confusion, contour, dice_from_jaccard, evaluate_maps, macro_average, metrics, micro_aggregate,
    render_overlay, sweep_maps, MetricsCounts, PredictionCategory, Scope, SWEEP_GRID,
};

/// Straight from the definitions, on booleans.
fn brute(pred: &[bool], gt: &[bool]) -> [Option<f64>; 5] {
    let n = pred.len() as f64;
    let tp = pred.iter().zip(gt).filter(|(p, g)| **p && **g).count() as f64;
    let agree = pred.iter().zip(gt).filter(|(p, g)| p == g).count() as f64;
    let npred = pred.iter().filter(|p| **p).count() as f64;
    let ngt = gt.iter().filter(|g| **g).count() as f64;
    let union = pred.iter().zip(gt).filter(|(p, g)| **p || **g).count() as f64;
    let div = |a: f64, b: f64| (b > 0.0).then(|| a / b);
    [div(agree, n), div(tp, npred), div(tp, ngt), div(2.0 * tp, npred + ngt), div(tp, union)]
}

fn raster(bits: &[bool], w: usize) -> Raster {
    Raster::new(w, bits.len() / w, bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap()
}

fn mask_pair() -> impl Strategy<Value = (Vec<bool>, Vec<bool>, usize)> {
    (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
        (
            proptest::collection::vec(any::<bool>(), w * h),
            proptest::collection::vec(any::<bool>(), w * h),
            Just(w),
        )
    })
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() < 1e-12,
        (None, None) => true,
        _ => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_match_definitions((p, g, w) in mask_pair()) {
        let c = confusion(&raster(&p, w), &raster(&g, w)).unwrap();
        prop_assert_eq!(c.total() as usize, p.len());
        let got = metrics(&c).unwrap().values();
        for (a, b) in got.iter().zip(brute(&p, &g)) {
            prop_assert!(close(*a, b), "{:?} vs {:?}", a, b);
        }
        if let Some(j) = c.jaccard() {
            prop_assert!((dice_from_jaccard(j) - c.dice().unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn micro_aggregate_is_metrics_of_summed_counts(
        pairs in proptest::collection::vec((0u64..50, 0u64..50, 0u64..50, 0u64..50), 1..10)
    ) {
        let counts: Vec<MetricsCounts> = pairs.iter().map(|&(a, b, c, d)| MetricsCounts::new(a, b, c, d)).collect();
        let micro = micro_aggregate(&counts).unwrap();
        let total = counts.iter().fold(MetricsCounts::default(), |acc, c| acc + *c);
        prop_assert_eq!(micro.scope, Scope::MicroAggregate);
        prop_assert_eq!(micro.values(), metrics(&total).unwrap().values());
    }

    #[test]
    fn binarize_is_threshold_inclusive(v in proptest::collection::vec(0.0f32..=1.0, 1..40), t in 0.01f64..0.99) {
        let r = Raster::new(v.len(), 1, v.clone()).unwrap();
        let b = binarize(&r, t).unwrap();
        for (x, y) in v.iter().zip(b.data()) {
            prop_assert_eq!(*y == 1.0, *x as f64 >= t);
        }
    }
}

#[test]
fn macro_average_skips_undefined_entries() {
    let defined = metrics(&MetricsCounts::new(3, 1, 1, 0)).unwrap();
    let empty = metrics(&MetricsCounts::new(0, 4, 0, 0)).unwrap();
    assert_eq!(empty.jaccard, None);
    let avg = macro_average(&[defined, empty]).unwrap();
    assert_eq!(avg.jaccard, defined.jaccard);
    assert_eq!(avg.skipped[4], 1);
    assert_eq!(avg.accuracy, Some((0.8 + 1.0) / 2.0));
}

#[test]
fn category_boundaries() {
    use PredictionCategory::*;
    let cases = [
        (0.99, Best),
        (0.970_000_1, Best),
        (0.97, Better),
        (0.95, Better),
        (0.9499, Fair),
        (0.90, Fair),
        (0.8999, BelowFair),
        (0.0, BelowFair),
    ];
    for (j, want) in cases {
        assert_eq!(PredictionCategory::from_jaccard(j), want, "J = {j}");
    }
}

#[test]
fn contour_of_a_square() {
    let mask = Raster::from_fn(8, 8, |x, y| if (2..6).contains(&x) && (2..6).contains(&y) { 1.0 } else { 0.0 });
    let c = contour(&mask);
    assert_eq!(c.area(), 12);
    assert_eq!(c.get(2, 2), 1.0);
    assert_eq!(c.get(3, 3), 0.0);
    assert_eq!(c.get(0, 0), 0.0);

    let full = Raster::filled(4, 3, 1.0);
    assert_eq!(contour(&full).area(), 4 * 3 - 2);
}

#[test]
fn captions() {
    assert_eq!(caption(Some(0.95)), "JI 95.0% DC 97.4%");
    assert_eq!(caption(Some(1.0)), "JI 100.0% DC 100.0%");
    assert_eq!(caption(None), "JI n/a DC n/a");
}

#[test]
fn overlay_has_image_dimensions() {
    let img = Raster::filled(30, 20, 100.0);
    let gt = Raster::from_fn(30, 20, |x, _| if x < 15 { 1.0 } else { 0.0 });
    let pred = Raster::from_fn(30, 20, |x, _| if x < 12 { 1.0 } else { 0.0 });
    let out = render_overlay(&img, &gt, &pred).unwrap();
    assert_eq!(out.dimensions(), (30, 20));
    assert!(render_overlay(&img, &Raster::filled(4, 4, 0.0), &pred).is_err());
}

fn pair(frame: usize, mask: Raster) -> SamplePair {
    SamplePair::new(Raster::filled(mask.width(), mask.height(), 0.0), mask, "s", frame).unwrap()
}

#[test]
fn report_files_and_sweep() {
    let masks: Vec<Raster> = (0..3)
        .map(|k| Raster::from_fn(10, 10, |x, _| if x < 3 + k { 1.0 } else { 0.0 }))
        .collect();
    let pairs: Vec<SamplePair> = masks.iter().enumerate().map(|(i, m)| pair(i, m.clone())).collect();
    // probability map falls off linearly across columns
    let maps: Vec<Raster> = (0..3).map(|_| Raster::from_fn(10, 10, |x, _| 1.0 - x as f32 / 10.0 - 0.05)).collect();

    let report = evaluate_maps("probe", &pairs, &maps, 0.5).unwrap();
    let counts: Vec<MetricsCounts> = report.images.iter().map(|r| r.counts).collect();
    assert_eq!(report.micro.values(), micro_aggregate(&counts).unwrap().values());
    // columns 0..5 are predicted: J = (3+k)/5
    let js: Vec<f64> = report.images.iter().map(|r| r.report.jaccard.unwrap()).collect();
    assert_eq!(js, vec![0.6, 0.8, 1.0]);

    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path(), "probe").unwrap();
    let csv = std::fs::read_to_string(dir.path().join("probe.csv")).unwrap();
    assert_eq!(csv.lines().count(), pairs.len() + 1);
    let summary = std::fs::read_to_string(dir.path().join("probe_summary.csv")).unwrap();
    assert!(summary.contains("micro"));

    let refs: Vec<&Raster> = masks.iter().collect();
    let table = sweep_maps(&maps, &refs, &SWEEP_GRID).unwrap();
    assert_eq!(table.rows.len(), SWEEP_GRID.len());
    for (t, j) in &table.rows {
        let pred: Vec<MetricsCounts> = maps
            .iter()
            .zip(&masks)
            .map(|(m, g)| confusion(&binarize(m, *t).unwrap(), g).unwrap())
            .collect();
        assert_eq!(*j, micro_aggregate(&pred).unwrap().jaccard);
    }
    let best = table.rows.iter().filter_map(|(_, j)| *j).fold(0.0, f64::max);
    let at_best = table.rows.iter().find(|(t, _)| *t == table.best_threshold).unwrap().1.unwrap();
    assert_eq!(at_best, best);

    assert!(evaluate_maps("probe", &pairs, &maps, 1.0).is_err());
    assert!(evaluate_maps("probe", &pairs, &maps[..2], 0.5).is_err());
}
