//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs under `cargo test`. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p blastoseg-cli --test acceptance -- 7 9`.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blastoseg::data::{carve_validation, partition, AugmentParams, PhantomSetSpec, Raster, ResizeKind, SamplePair};
use blastoseg::evaluation::{confusion, dice_from_jaccard, evaluate_testset, metrics, threshold_sweep};
use blastoseg::models::{
    Architecture, Block, EnsembleSpec, ModelConfig, ModelGraph, ResidualUnitProbe,
};
use blastoseg::numerics::layers::{
    random_tensor, BatchNormLayer, Conv2dLayer, MaxPool2dLayer, ReluLayer, SigmoidLayer, TransposedConv2dLayer,
};
use blastoseg::numerics::{finite_difference_check, finite_difference_check_sampled, Differentiable, Shape, Tensor4D};
use blastoseg::training::{
    bce_jaccard_loss, train_with, EarlyStopper, PlateauScheduler, StopDecision, StopReason, TrainConfig,
};
use blastoseg::Result as CoreResult;

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- 1

/// Sigmoid followed by the BCE + soft-Jaccard loss, as a scalar layer.
struct LossLayer {
    target: Tensor4D<f64>,
}

impl Differentiable<f64> for LossLayer {
    fn label(&self) -> String {
        "sigmoid + bce/jaccard loss".into()
    }

    fn param_names(&self) -> Vec<String> {
        vec![]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4D<f64>> {
        vec![]
    }

    fn forward(&self, logits: &Tensor4D<f64>) -> CoreResult<Tensor4D<f64>> {
        let p = SigmoidLayer.forward(logits)?;
        let (loss, _) = bce_jaccard_loss(&p, &self.target, 1.0)?;
        Tensor4D::new(Shape::new(1, 1, 1, 1), vec![loss])
    }

    fn backward(&self, logits: &Tensor4D<f64>, g: &Tensor4D<f64>) -> CoreResult<(Tensor4D<f64>, Vec<Tensor4D<f64>>)> {
        let p = SigmoidLayer.forward(logits)?;
        let (_, dp) = bce_jaccard_loss(&p, &self.target, 1.0)?;
        let dp = dp.map(|v| v * g.data()[0]);
        let (dx, _) = SigmoidLayer.backward(logits, &dp)?;
        Ok((dx, vec![]))
    }
}

/// Inputs bounded away from zero so ReLU kinks stay outside the stencil.
fn away_from_zero(shape: Shape, seed: u64) -> Tensor4D<f64> {
    random_tensor::<f64>(shape, seed).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

/// Distinct values 0.01 apart in shuffled order, so no pooling window has a near tie.
fn distinct_values(shape: Shape, seed: u64) -> Tensor4D<f64> {
    let mut vals: Vec<f64> = (0..shape.len()).map(|i| i as f64 * 0.01 - 1.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    Tensor4D::new(shape, vals).unwrap()
}

fn gradients() -> Outcome {
    const TOL: f64 = 1e-3;
    const STEP: f64 = 1e-4;
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut record = |kind: String, layer: &mut dyn Differentiable<f64>, x: &Tensor4D<f64>, sampled: Option<usize>| {
        let r = match sampled {
            Some(n) => finite_difference_check_sampled(layer, x, STEP, TOL, n),
            None => finite_difference_check(layer, x, STEP, TOL),
        }
        .map_err(|e| format!("{kind}: {e}"))?;
        ensure!(r.passed(), "{kind}: relative error {:.3e} in {}", r.max_relative_error, r.parameter_name);
        let w = worst.entry(kind).or_insert(0.0);
        *w = w.max(r.max_relative_error);
        Ok(())
    };
    for i in 0..5u64 {
        for d in [1usize, 2, 4, 8, 16] {
            let mut l = Conv2dLayer::<f64>::random(3, 2, 3, 1, d, 10 * i + d as u64);
            // Large enough that every tap of the dilated kernel lands inside.
            let side = (2 * d + 3).max(9);
            let x = random_tensor::<f64>(Shape::new(2, 2, side, side), 100 + 10 * i + d as u64);
            record(format!("conv2d d={d}"), &mut l, &x, None)?;
        }
        let mut l = TransposedConv2dLayer::<f64>::random(3, 2, 200 + i);
        record("transposed_conv2d".into(), &mut l, &random_tensor(Shape::new(2, 3, 4, 4), 210 + i), None)?;
        record("maxpool2d".into(), &mut MaxPool2dLayer, &distinct_values(Shape::new(2, 2, 6, 6), 220 + i), None)?;
        let mut bn = BatchNormLayer::<f64>::random(3, 230 + i);
        record("batchnorm".into(), &mut bn, &random_tensor(Shape::new(4, 3, 3, 3), 240 + i), None)?;
        record("relu".into(), &mut ReluLayer, &away_from_zero(Shape::new(2, 2, 4, 4), 250 + i), None)?;
        let x = random_tensor::<f64>(Shape::new(2, 2, 4, 4), 260 + i).map(|v| 3.0 * v);
        record("sigmoid".into(), &mut SigmoidLayer, &x, None)?;
        let (cin, cout) = [(3, 3), (2, 4), (4, 2), (3, 5), (5, 5)][i as usize];
        let mut unit = ResidualUnitProbe::<f64>::random(cin, cout, 270 + i);
        let x = random_tensor::<f64>(Shape::new(2, cin, 5, 5), 280 + i);
        record("residual unit".into(), &mut unit, &x, Some(24))?;
        let mut rng = ChaCha8Rng::seed_from_u64(290 + i);
        let target = Tensor4D::from_fn(Shape::new(2, 1, 4, 4), |_, _, _, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
        let mut loss = LossLayer { target };
        let x = random_tensor::<f64>(Shape::new(2, 1, 4, 4), 300 + i).map(|v| 2.0 * v);
        record("bce+jaccard loss".into(), &mut loss, &x, None)?;
    }
    let max = worst.values().cloned().fold(0.0, f64::max);
    Ok(format!("{} layer kinds x 5 instances, worst relative error {max:.2e}", worst.len()))
}

// ---------------------------------------------------------------- 2

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> Raster {
    Raster::from_fn(w, h, |_, _| if rng.random_bool(density) { 1.0 } else { 0.0 })
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut undefined = 0usize;
    for i in 0..1000 {
        let (w, h) = (rng.random_range(1..=24), rng.random_range(1..=24));
        // Every tenth pair uses extreme densities so empty predictions and masks occur.
        let (dp, dg) = if i % 10 == 0 {
            ([0.0, 1.0, 0.02][i / 10 % 3], [0.0, 1.0, 0.5][i / 30 % 3])
        } else {
            (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0))
        };
        let pred = random_mask(&mut rng, w, h, dp);
        let gt = random_mask(&mut rng, w, h, dg);
        let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for y in 0..h {
            for x in 0..w {
                match (pred.get(x, y) == 1.0, gt.get(x, y) == 1.0) {
                    (true, true) => tp += 1,
                    (false, false) => tn += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                }
            }
        }
        let c = confusion(&pred, &gt).map_err(|e| e.to_string())?;
        ensure!(
            (c.tp, c.tn, c.fp, c.fn_) == (tp, tn, fp, fn_),
            "pair {i}: counts {c:?} vs oracle {:?}",
            (tp, tn, fp, fn_)
        );
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        let expected = [
            ratio(tp + tn, tp + tn + fp + fn_),
            ratio(tp, tp + fp),
            ratio(tp, tp + fn_),
            ratio(2 * tp, 2 * tp + fp + fn_),
            ratio(tp, tp + fp + fn_),
        ];
        let got = metrics(&c).map_err(|e| e.to_string())?.values();
        for (k, (g, e)) in got.iter().zip(&expected).enumerate() {
            match (g, e) {
                (Some(g), Some(e)) => ensure!((g - e).abs() <= 1e-12, "pair {i} metric {k}: {g} vs {e}"),
                (None, None) => undefined += 1,
                _ => return Err(format!("pair {i} metric {k}: {g:?} vs {e:?}")),
            }
        }
    }
    Ok(format!("1000 pairs, counts exact, ratios within 1e-12, {undefined} undefined ratios agree"))
}

// ---------------------------------------------------------------- 3

fn table_identity() -> Outcome {
    // (model, Dice %, Jaccard %) as reported.
    let rows = [
        ("U-Net", 98.1, 96.3),
        ("SD U-Net", 97.8, 95.8),
        ("ResU-Net", 98.4, 96.8),
        ("RD U-Net", 98.4, 96.9),
        ("Unweighted ensemble", 98.1, 96.2),
        ("Weighted ensemble", 98.1, 96.2),
    ];
    let mut worst = 0.0f64;
    for (name, dice, jac) in rows {
        let d = 100.0 * dice_from_jaccard(jac / 100.0);
        let oracle = 100.0 * 2.0 * (jac / 100.0) / (jac / 100.0 + 1.0);
        ensure!((d - oracle).abs() < 1e-9, "{name}: identity gives {d}, oracle {oracle}");
        ensure!((d - dice).abs() <= 0.1, "{name}: J {jac} gives D {d:.3}, reported {dice}");
        worst = worst.max((d - dice).abs());
    }
    Ok(format!("6 rows, largest gap {worst:.3} pp"))
}

// ---------------------------------------------------------------- 4

fn shape_audit() -> Outcome {
    let goldens = [
        (Architecture::UNet, 1_943_761usize),
        (Architecture::SdUNet, 3_715_537),
        (Architecture::ResUNet, 2_031_523),
        (Architecture::RdUNet, 3_770_531),
    ];
    for (arch, golden) in goldens {
        let m = ModelGraph::<f32>::build(ModelConfig::new(arch, 16, (240, 240))).map_err(|e| e.to_string())?;
        let shapes = m.feature_shapes(240, 240).map_err(|e| e.to_string())?;
        let get = |n: &str| shapes.iter().find(|(k, _)| k == n).map(|(_, s)| *s);
        for (i, w) in [16, 32, 64, 128].into_iter().enumerate() {
            let side = 240 >> i;
            let got = get(&format!("encoder{}", i + 1));
            ensure!(got == Some(Shape::new(1, w, side, side)), "{arch} encoder{}: {got:?}", i + 1);
        }
        for (i, w) in [128, 64, 32, 16].into_iter().enumerate() {
            let side = 30 << i;
            let got = get(&format!("decoder{}", i + 1));
            ensure!(got == Some(Shape::new(1, w, side, side)), "{arch} decoder{}: {got:?}", i + 1);
        }
        let dil = m.bridge().dilations();
        if arch.has_dilated_bridge() {
            ensure!(dil == vec![1, 2, 4, 8, 16], "{arch} bridge dilations {dil:?}");
            ensure!(matches!(m.bridge(), Block::Plain(u) if u.len() == 5), "{arch}: bridge is not 5 conv layers");
        } else {
            ensure!(dil.len() == 2, "{arch} bridge dilations {dil:?}");
        }
        let x = Tensor4D::<f32>::zeros(Shape::new(1, 1, 240, 240));
        let out = m.forward_batch_stats(&x).map_err(|e| e.to_string())?.probabilities;
        ensure!(out.shape() == Shape::new(1, 1, 240, 240), "{arch} output {:?}", out.shape());
        ensure!(out.data().iter().all(|&p| p > 0.0 && p < 1.0), "{arch}: output outside (0, 1)");
        ensure!(m.parameter_count() == golden, "{arch}: {} parameters, golden {golden}", m.parameter_count());
    }
    Ok("4 builders: widths, dilated bridges, (1,1,240,240) output and parameter goldens".into())
}

// ---------------------------------------------------------------- 5, 6

struct DeskRun {
    model: ModelGraph<f32>,
    test: Vec<SamplePair>,
    jaccard: f64,
    seconds: f64,
    best_epoch: usize,
}

const DESK_SEED: u64 = 7;

fn desk_data() -> (Vec<SamplePair>, Vec<SamplePair>, Vec<SamplePair>) {
    let set = PhantomSetSpec {
        blastocysts: 25,
        frames: 10,
        image_size: 64,
        seed: DESK_SEED,
        ..Default::default()
    };
    let pairs = set.generate().expect("phantoms");
    let mut parts = partition(pairs, &[160, 40], DESK_SEED);
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    (train, val, test)
}

fn desk_train(arch: Architecture) -> std::result::Result<DeskRun, String> {
    let (train, val, test) = desk_data();
    let t0 = Instant::now();
    let model = ModelGraph::<f32>::build(ModelConfig::new(arch, 8, (64, 64)).with_seed(DESK_SEED))
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        max_epochs: 60,
        seed: DESK_SEED,
        augment: false,
        ..Default::default()
    };
    let (model, history) = train_with(model, &train, &val, &cfg, |_| Ok(())).map_err(|e| e.to_string())?;
    let report = evaluate_testset(&model, &test, 0.5).map_err(|e| e.to_string())?;
    Ok(DeskRun {
        model,
        test,
        jaccard: report.micro.jaccard.unwrap_or(0.0),
        seconds: t0.elapsed().as_secs_f64(),
        best_epoch: history.best_epoch,
    })
}

fn desk_scale(state: &mut Option<DeskRun>) -> Outcome {
    let rd = desk_train(Architecture::RdUNet)?;
    let unet = desk_train(Architecture::UNet)?;
    let ordering = if rd.jaccard > unet.jaccard { "RD > U-Net" } else { "U-Net >= RD" };
    let line = format!(
        "RD U-Net J {:.4} (best epoch {}, {:.0} s), U-Net J {:.4} (best epoch {}, {:.0} s); {ordering}",
        rd.jaccard, rd.best_epoch, rd.seconds, unet.jaccard, unet.best_epoch, unet.seconds
    );
    let ok = rd.jaccard >= 0.90 && unet.jaccard >= 0.88 && rd.seconds <= 1800.0 && unet.seconds <= 1800.0;
    *state = Some(rd);
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn threshold_insensitivity(state: &mut Option<DeskRun>) -> Outcome {
    if state.is_none() {
        *state = Some(desk_train(Architecture::RdUNet)?);
    }
    let run = state.as_ref().unwrap();
    let table = threshold_sweep(&run.model, &run.test).map_err(|e| e.to_string())?;
    let band: Vec<String> = table
        .rows
        .iter()
        .filter(|(t, _)| [0.4, 0.5, 0.6].iter().any(|b| (t - b).abs() < 1e-9))
        .map(|(t, j)| format!("{t}: {:.4}", j.unwrap_or(f64::NAN)))
        .collect();
    let line = format!("RD U-Net micro J {}; spread {:.2} pp", band.join(", "), 100.0 * table.band_spread);
    if table.band_spread < 0.01 {
        Ok(line)
    } else {
        Err(line)
    }
}

// ---------------------------------------------------------------- 7

fn ensemble_identities() -> Outcome {
    let batch = |seed: u64| random_tensor::<f32>(Shape::new(2, 1, 32, 32), seed);
    let build = |arch: Architecture, seed: u64| -> CoreResult<ModelGraph<f32>> {
        let mut m = ModelGraph::build(ModelConfig::new(arch, 4, (32, 32)).with_seed(seed))?;
        m.calibrate(&random_tensor(Shape::new(4, 1, 32, 32), seed + 50))?;
        Ok(m)
    };
    let run = || -> CoreResult<Outcome> {
        let a = build(Architecture::UNet, 1)?;
        let b = build(Architecture::ResUNet, 2)?;
        let c = build(Architecture::RdUNet, 3)?;
        let copies = EnsembleSpec::unweighted(vec![a.clone(), a.clone(), a.clone()])?;
        let one_hot = EnsembleSpec::weighted(vec![a.clone(), b.clone(), c.clone()], &[1.0, 0.0, 0.0])?;
        let mixed = EnsembleSpec::weighted(vec![a.clone(), b.clone(), c.clone()], &[0.963, 0.968, 0.969])?;
        let plain = EnsembleSpec::unweighted(vec![a.clone(), b.clone(), c.clone()])?;
        for i in 0..100u64 {
            let x = batch(1000 + i);
            let single = a.predict(&x)?;
            if copies.predict(&x)? != single {
                return Ok(Err(format!("input {i}: unweighted copies differ from the single model")));
            }
            if one_hot.predict(&x)? != single {
                return Ok(Err(format!("input {i}: one-hot weights differ from member 1")));
            }
            let members = [single, b.predict(&x)?, c.predict(&x)?];
            for e in [&mixed, &plain] {
                let out = e.predict(&x)?;
                for (k, &v) in out.data().iter().enumerate() {
                    let lo = members.iter().map(|m| m.data()[k]).fold(f32::INFINITY, f32::min);
                    let hi = members.iter().map(|m| m.data()[k]).fold(f32::NEG_INFINITY, f32::max);
                    if v < lo || v > hi {
                        return Ok(Err(format!("input {i} element {k}: {v} outside [{lo}, {hi}]")));
                    }
                }
            }
        }
        Ok(Ok("copies and one-hot weights bit-exact; both schemes within member bounds on 100 inputs".into()))
    };
    run().map_err(|e| e.to_string())?
}

// ---------------------------------------------------------------- 8

fn run_cli(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_blastoseg"))
        .args(args)
        .env("BLASTOSEG_THREADS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "blastoseg {} exited with {}: {}",
        args.join(" "),
        out.status,
        String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("")
    );
    Ok(())
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable directory") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).expect("readable file");
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    files
}

fn pipeline_run(root: &Path) -> std::result::Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let (data, train, eval) = (p("data"), p("train"), p("eval"));
    run_cli(&["generate", "--out", &data, "--blastocysts", "6", "--frames", "4", "--size", "48", "--seed", "11"])?;
    run_cli(&[
        "train", "--data", &data, "--model", "rd-unet", "--base-filters", "4", "--size", "32", "--max-epochs", "5",
        "--seed", "11", "--out", &train,
    ])?;
    let ckpt = p("train/model.ckpt");
    run_cli(&["eval", "--data", &data, "--checkpoint", &ckpt, "--out", &eval, "--sweep"])?;
    Ok(tree(root))
}

fn pipeline_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline_run(a.path())?;
    let second = pipeline_run(b.path())?;
    for required in ["train/history.csv", "train/model.ckpt", "eval/rd_unet.csv", "eval/rd_unet_summary.csv"] {
        ensure!(first.contains_key(Path::new(required)), "missing {required}");
    }
    ensure!(
        first.keys().eq(second.keys()),
        "file sets differ: {:?} vs {:?}",
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>()
    );
    for (path, bytes) in &first {
        ensure!(second[path] == *bytes, "{} differs between runs", path.display());
    }
    let bytes: usize = first.values().map(Vec::len).sum();
    Ok(format!("{} files ({bytes} bytes) byte-identical across two runs", first.len()))
}

// ---------------------------------------------------------------- 9

/// Reference semantics written out step by step: improvement means dropping
/// below the best by more than 1e-6; after `patience` stale epochs the rate is
/// multiplied by `factor` (floored) and the count restarts.
fn oracle_rates(losses: &[f64], lr0: f64, factor: f64, patience: usize, floor: f64) -> Vec<f64> {
    let (mut lr, mut best, mut stale) = (lr0, f64::INFINITY, 0);
    let mut out = Vec::new();
    for &l in losses {
        if best - l > 1e-6 {
            best = l;
            stale = 0;
        } else {
            stale += 1;
            if stale == patience {
                lr = f64::max(lr * factor, floor);
                stale = 0;
            }
        }
        out.push(lr);
    }
    out
}

/// 1-based epoch at which training stops, if it does.
fn oracle_stop(losses: &[f64], patience: usize) -> Option<usize> {
    let (mut best, mut stale) = (f64::INFINITY, 0);
    for (i, &l) in losses.iter().enumerate() {
        if best - l > 1e-6 {
            best = l;
            stale = 0;
        } else {
            stale += 1;
            if stale == patience {
                return Some(i + 1);
            }
        }
    }
    None
}

fn scheduler_suite() -> Outcome {
    // Scripted sequences: flat, improving then flat, tiny improvements below
    // the threshold, and a long plateau that hits the floor.
    let mut scripts: Vec<Vec<f64>> = vec![
        vec![1.0; 12],
        (0..30).map(|i| if i < 5 { 1.0 - 0.1 * i as f64 } else { 0.6 }).collect(),
        (0..20).map(|i| 1.0 - 5e-7 * i as f64).collect(),
        std::iter::once(1.0).chain(std::iter::repeat_n(2.0, 600)).collect(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let mut l = 1.0;
        scripts.push(
            (0..80)
                .map(|_| {
                    l += rng.random_range(-0.02..0.025);
                    l
                })
                .collect(),
        );
    }
    let mut checked = 0;
    for (k, s) in scripts.iter().enumerate() {
        let mut sched = PlateauScheduler::new(1e-4, 0.95, 5, 1e-6);
        let got: Vec<f64> = s.iter().map(|&l| sched.observe(l)).collect();
        let want = oracle_rates(s, 1e-4, 0.95, 5, 1e-6);
        for (e, (g, w)) in got.iter().zip(&want).enumerate() {
            ensure!(g == w, "script {k} epoch {}: lr {g} vs {w}", e + 1);
        }
        let mut stopper = EarlyStopper::new(15);
        let stop = s
            .iter()
            .enumerate()
            .find(|(i, &l)| stopper.observe(i + 1, l) == StopDecision::Stop)
            .map(|(i, _)| i + 1);
        ensure!(stop == oracle_stop(s, 15), "script {k}: stop {stop:?} vs {:?}", oracle_stop(s, 15));
        checked += s.len();
    }
    // Flat script: epoch 1 improves on infinity, epochs 2-6 are stale, so the
    // first cut is applied after epoch 6.
    let flat = oracle_rates(&scripts[0], 1e-4, 0.95, 5, 1e-6);
    ensure!(flat[4] == 1e-4 && flat[5] == 1e-4 * 0.95 && flat[10] == 1e-4 * 0.95 * 0.95, "cut after five flat epochs");
    ensure!(*oracle_rates(&scripts[3], 1e-4, 0.95, 5, 1e-6).last().unwrap() == 1e-6, "floor at 1e-6");
    ensure!(oracle_stop(&scripts[3], 15) == Some(16), "stop 15 epochs after the best");

    // Best-weights restoration on a real run with a short stopping patience.
    let set = PhantomSetSpec {
        blastocysts: 4,
        frames: 5,
        image_size: 16,
        seed: 5,
        ..Default::default()
    };
    let pairs = set.generate().map_err(|e| e.to_string())?;
    let (train, val) = carve_validation(pairs, 0.2, 5).map_err(|e| e.to_string())?;
    let model = ModelGraph::<f32>::build(ModelConfig::new(Architecture::UNet, 2, (16, 16)).with_seed(5))
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        max_epochs: 40,
        initial_lr: 1e-1,
        lr_patience_epochs: 2,
        early_stop_patience: 3,
        batch_size: 4,
        augment: false,
        seed: 5,
        ..Default::default()
    };
    let mut snapshots = Vec::new();
    let (restored, history) = train_with(model, &train, &val, &cfg, |r| {
        snapshots.push(r.model.params().tensors().to_vec());
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let losses: Vec<f64> = history.records.iter().map(|r| r.val_loss).collect();
    let rates: Vec<f64> = history.records.iter().map(|r| r.lr).collect();
    let mut expected_rates = vec![cfg.initial_lr];
    expected_rates.extend(oracle_rates(&losses, cfg.initial_lr, cfg.lr_factor, 2, cfg.min_lr));
    ensure!(rates == expected_rates[..rates.len()], "run rates {rates:?} vs {expected_rates:?}");
    let stopped = (history.stop_reason == StopReason::EarlyStop).then_some(history.records.len());
    ensure!(oracle_stop(&losses, 3) == stopped, "run stopped at {stopped:?}, reference {:?}", oracle_stop(&losses, 3));
    let min_epoch = losses
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(be, bl), (i, &l)| if l < bl { (i + 1, l) } else { (be, bl) })
        .0;
    ensure!(history.best_epoch == min_epoch, "best epoch {} vs minimum at {min_epoch}", history.best_epoch);
    ensure!(
        restored.params().tensors() == snapshots[min_epoch - 1].as_slice(),
        "returned weights are not the epoch-{min_epoch} weights"
    );
    Ok(format!(
        "{} scripts ({checked} epochs) match the reference; a {}-epoch run ({}) restored epoch {min_epoch}",
        scripts.len(),
        history.records.len(),
        history.stop_reason.as_str()
    ))
}

// ---------------------------------------------------------------- 10

/// Forward transform, written independently of the library's inverse:
/// flip, rotate, zoom about the centre, then shift.
fn forward_point(t: &AugmentParams, sx: f64, sy: f64, w: usize, h: usize) -> (f64, f64) {
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut px = sx + 0.5 - cx;
    let mut py = sy + 0.5 - cy;
    if t.flip_horizontal {
        px = -px;
    }
    if t.flip_vertical {
        py = -py;
    }
    let th = t.rotation_deg.to_radians();
    let rx = th.cos() * px - th.sin() * py;
    let ry = th.sin() * px + th.cos() * py;
    (
        t.zoom * rx + t.shift_x * w as f64 + cx - 0.5,
        t.zoom * ry + t.shift_y * h as f64 + cy - 0.5,
    )
}

fn augmentation_alignment() -> Outcome {
    let set = PhantomSetSpec {
        blastocysts: 4,
        frames: 3,
        image_size: 40,
        seed: 10,
        ..Default::default()
    };
    let pairs = set.generate().map_err(|e| e.to_string())?;
    let (w, h) = (40usize, 40usize);
    // A linear ramp is reproduced exactly by bilinear sampling, so the image
    // value at each output pixel reveals the source point it was read from.
    let ramp = Raster::from_fn(w, h, |x, y| (x as f32) * 3.0 + (y as f32) * 100.0 + 1.0);
    let mut interior = 0usize;
    for i in 0..1000u64 {
        let t = AugmentParams::from_seed(i);
        let pair = &pairs[i as usize % pairs.len()];
        let out = t.apply_pair(pair);
        let out_ramp = t.apply(&ramp, ResizeKind::Image);
        ensure!(out.mask.data().iter().all(|&v| v == 0.0 || v == 1.0), "seed {i}: mask not two-valued");
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = t.source_of(x, y, w, h);
                let (fx, fy) = forward_point(&t, sx, sy, w, h);
                ensure!(
                    (fx - x as f64).abs() < 1e-9 && (fy - y as f64).abs() < 1e-9,
                    "seed {i} pixel ({x},{y}): source maps forward to ({fx},{fy})"
                );
                let (nx, ny) = ((sx + 0.5).floor(), (sy + 0.5).floor());
                let inside = nx >= 0.0 && ny >= 0.0 && nx < w as f64 && ny < h as f64;
                let want = if inside { pair.mask.get(nx as usize, ny as usize) } else { 0.0 };
                ensure!(out.mask.get(x, y) == want, "seed {i} pixel ({x},{y}): mask {} vs {want}", out.mask.get(x, y));
                if sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64 {
                    let expect = sx * 3.0 + sy * 100.0 + 1.0;
                    let got = out_ramp.get(x, y) as f64;
                    ensure!((got - expect).abs() < 1e-2, "seed {i} pixel ({x},{y}): ramp {got} vs {expect}");
                    interior += 1;
                }
            }
        }
    }
    Ok(format!("1000 seeded transforms: masks exact and two-valued, {interior} interior image samples aligned"))
}

// ----------------------------------------------------------------

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut desk: Option<DeskRun> = None;
    let names = [
        "gradient correctness",
        "metric oracle equivalence",
        "Dice/Jaccard identity on the published scores",
        "architecture shape audit",
        "desk-scale training",
        "threshold insensitivity",
        "ensemble identities",
        "pipeline determinism",
        "scheduler and stopper semantics",
        "augmentation alignment",
    ];
    let mut failures = 0;
    for (i, name) in names.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(|| match n {
            1 => gradients(),
            2 => metric_oracle(),
            3 => table_identity(),
            4 => shape_audit(),
            5 => desk_scale(&mut desk),
            6 => threshold_insensitivity(&mut desk),
            7 => ensemble_identities(),
            8 => pipeline_determinism(),
            9 => scheduler_suite(),
            _ => augmentation_alignment(),
        }))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:2} PASS {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n:2} FAIL {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
