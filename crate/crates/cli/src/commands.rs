use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use blastoseg::data::{
    carve_validation, read_dataset, read_png, resize, split_dataset, split_grouped, write_dataset, write_mask_png,
    PhantomSetSpec, Raster, ResizeKind, SamplePair, SplitRecord,
};
use blastoseg::evaluation::testset::DEFAULT_BATCH;
use blastoseg::evaluation::{binarize, evaluate_maps, predict_native, render_overlay, sweep_maps, Segmenter, SWEEP_GRID};
use blastoseg::models::{Architecture, EnsembleScheme, EnsembleSpec, ModelConfig, ModelGraph, ENSEMBLE_MEMBERS};
use blastoseg::numerics::Checkpoint;
use blastoseg::training::{train_with, TrainConfig, TrainHistory};
use blastoseg::Error;

use crate::args::{EvalArgs, GenerateArgs, ModelChoice, ModelKind, SegmentArgs, SweepArgs, SweepSet, TrainArgs};
use crate::failure::Failure;

const CHECKPOINT_FILE: &str = "model.ckpt";
const META_VAL_JACCARD: &str = "val_jaccard";
const META_VAL_LOSS: &str = "val_loss";
const META_BEST_EPOCH: &str = "best_epoch";
const META_TRAIN_SEED: &str = "train_seed";
const META_VAL_FRACTION: &str = "validation_fraction";

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())).into())
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = toml::to_string(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    fs::write(path, text)?;
    Ok(())
}

/// Referenced inputs must exist before any work starts.
fn require_exists(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} {} does not exist", path.display())))
    }
}

fn check_threshold(t: f64) -> Result<(), Failure> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Failure::usage(format!("threshold {t} outside (0, 1)")))
    }
}

pub fn generate(args: GenerateArgs) -> Result<(), Failure> {
    if let Some(p) = &args.spec {
        require_exists(p, "spec file")?;
    }
    let mut spec: PhantomSetSpec = match &args.spec {
        Some(p) => read_toml(p)?,
        None => PhantomSetSpec::default(),
    };
    if let Some(v) = args.blastocysts {
        spec.blastocysts = v;
    }
    if let Some(v) = args.frames {
        spec.frames = v;
    }
    if let Some(v) = args.size {
        spec.image_size = v;
    }
    if let Some(v) = args.noise {
        spec.noise_level = v;
    }
    if let Some(v) = args.debris {
        spec.debris_count = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    let pairs = spec.generate()?;
    let n = pairs.len();
    let split = if args.grouped {
        split_grouped(pairs, args.ratio, spec.seed)?
    } else {
        split_dataset(pairs, args.ratio, spec.seed)?
    };
    let record = SplitRecord {
        ratio: args.ratio,
        seed: spec.seed,
        grouped: args.grouped,
    };
    let (n_train, n_test) = (split.train.len(), split.test.len());
    write_dataset(&args.out, &split, record, Some(spec))?;
    println!("generated {n} pairs: {n_train} train, {n_test} test -> {}", args.out.display());
    Ok(())
}

/// Settings echoed to `config.toml` next to the trained weights.
#[derive(Serialize)]
struct TrainRecord {
    model: String,
    base_filters: usize,
    size: usize,
    train_pairs: usize,
    validation_pairs: usize,
    train: TrainConfig,
}

#[derive(Serialize)]
struct TrainSummary {
    architecture: String,
    epochs_run: usize,
    best_epoch: usize,
    best_val_loss: f64,
    best_val_jaccard: f64,
    stop_reason: String,
}

fn effective_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.initial_lr = v;
    }
    if let Some(v) = args.augment {
        cfg.augment = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn to_working_size(pairs: Vec<SamplePair>, size: usize) -> Result<Vec<SamplePair>, Failure> {
    pairs
        .into_iter()
        .map(|p| {
            if p.image.width() == size && p.image.height() == size {
                return Ok(p);
            }
            let image = resize(&p.image, size, size, ResizeKind::Image);
            let mask = resize(&p.mask, size, size, ResizeKind::Mask);
            Ok(SamplePair::new(image, mask, p.source_id, p.frame_index)?)
        })
        .collect()
}

fn train_one(
    arch: Architecture,
    args: &TrainArgs,
    cfg: &TrainConfig,
    train_set: &[SamplePair],
    val_set: &[SamplePair],
    out: &Path,
) -> Result<TrainHistory, Failure> {
    fs::create_dir_all(out)?;
    let model_cfg = ModelConfig::new(arch, args.base_filters, (args.size, args.size))
        .with_seed(cfg.seed)
        .with_dropout(cfg.dropout_rate);
    let model = ModelGraph::<f32>::build(model_cfg)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let name = arch.cli_name();
    let (_, history) = train_with(model, train_set, val_set, cfg, |report| {
        let r = report.record;
        eprintln!(
            "{name} epoch {} train_loss {:.6} val_loss {:.6} val_jaccard {:.4} lr {:.3e}{}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.val_jaccard,
            r.lr,
            if report.improved { " *" } else { "" }
        );
        if report.improved {
            let meta = vec![
                (META_BEST_EPOCH.to_string(), r.epoch.to_string()),
                (META_VAL_LOSS.to_string(), r.val_loss.to_string()),
                (META_VAL_JACCARD.to_string(), r.val_jaccard.to_string()),
                (META_TRAIN_SEED.to_string(), cfg.seed.to_string()),
                (META_VAL_FRACTION.to_string(), cfg.validation_fraction.to_string()),
            ];
            report.model.save_with(&ckpt, &meta)?;
        }
        Ok(())
    })?;
    history.write_csv(&out.join("history.csv"))?;
    let best = history.best();
    let summary = TrainSummary {
        architecture: arch.name().to_string(),
        epochs_run: history.records.len(),
        best_epoch: history.best_epoch,
        best_val_loss: best.val_loss,
        best_val_jaccard: best.val_jaccard,
        stop_reason: history.stop_reason.as_str().to_string(),
    };
    write_toml(&out.join("summary.toml"), &summary)?;
    println!(
        "{name}: best epoch {} of {} ({}), val_loss {:.6}, val_jaccard {:.4} -> {}",
        history.best_epoch,
        history.records.len(),
        summary.stop_reason,
        best.val_loss,
        best.val_jaccard,
        ckpt.display()
    );
    Ok(history)
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    require_exists(&args.data, "dataset")?;
    if let Some(p) = &args.config {
        require_exists(p, "config file")?;
    }
    let cfg = effective_config(&args)?;
    let (split, _) = read_dataset(&args.data)?;
    let pairs = to_working_size(split.train, args.size)?;
    let (train_set, val_set) = carve_validation(pairs, cfg.validation_fraction, cfg.seed)?;
    fs::create_dir_all(&args.out)?;
    let record = TrainRecord {
        model: args.model.name().to_string(),
        base_filters: args.base_filters,
        size: args.size,
        train_pairs: train_set.len(),
        validation_pairs: val_set.len(),
        train: cfg.clone(),
    };
    write_toml(&args.out.join("config.toml"), &record)?;
    match args.model.kind() {
        ModelKind::Single(arch) => {
            train_one(arch, &args, &cfg, &train_set, &val_set, &args.out)?;
        }
        ModelKind::Ensemble(_) => {
            // Both schemes share the same members; the scheme matters at eval.
            for arch in ENSEMBLE_MEMBERS {
                let dir = args.out.join(arch.cli_name());
                train_one(arch, &args, &cfg, &train_set, &val_set, &dir)?;
            }
        }
    }
    Ok(())
}

struct Member {
    model: ModelGraph<f32>,
    checkpoint: Checkpoint<f32>,
}

impl Member {
    fn meta_f64(&self, key: &str, path: &Path) -> Result<f64, Failure> {
        let raw = self
            .checkpoint
            .meta(key)
            .ok_or_else(|| Error::Checkpoint(format!("{}: no {key} metadata", path.display())))?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("{}: bad {key} value {raw:?}", path.display())).into())
    }
}

enum Loaded {
    Single(Box<ModelGraph<f32>>),
    Ensemble {
        spec: EnsembleSpec<f32>,
        jaccards: Vec<Option<f64>>,
    },
}

impl Loaded {
    fn segmenter(&self) -> &dyn Segmenter {
        match self {
            Loaded::Single(m) => m.as_ref(),
            Loaded::Ensemble { spec, .. } => spec,
        }
    }
}

fn load_member(path: &Path, expected: Option<Architecture>) -> Result<Member, Failure> {
    let checkpoint = Checkpoint::<f32>::load(path)?;
    let model = match expected {
        Some(arch) => ModelGraph::from_checkpoint_expecting(&checkpoint, arch)?,
        None => ModelGraph::from_checkpoint(&checkpoint)?,
    };
    Ok(Member { model, checkpoint })
}

fn load_models(paths: &[PathBuf], choice: Option<ModelChoice>) -> Result<Loaded, Failure> {
    for p in paths {
        require_exists(p, "checkpoint")?;
    }
    let kind = match choice {
        Some(c) => Some(c.kind()),
        None if paths.len() > 1 => {
            return Err(Failure::usage(
                "several checkpoints need --model ensemble-unweighted or ensemble-weighted",
            ))
        }
        None => None,
    };
    match kind {
        None | Some(ModelKind::Single(_)) => {
            let expected = match kind {
                Some(ModelKind::Single(a)) => Some(a),
                _ => None,
            };
            if paths.len() != 1 {
                return Err(Failure::usage(format!(
                    "a single model takes one --checkpoint, got {}",
                    paths.len()
                )));
            }
            let member = load_member(&paths[0], expected)?;
            Ok(Loaded::Single(Box::new(member.model)))
        }
        Some(ModelKind::Ensemble(scheme)) => {
            if paths.len() < 2 {
                return Err(Failure::usage(format!(
                    "an ensemble needs at least two --checkpoint files, got {}",
                    paths.len()
                )));
            }
            let mut models = Vec::with_capacity(paths.len());
            let mut jaccards = Vec::with_capacity(paths.len());
            for p in paths {
                let m = load_member(p, None)?;
                let j = match scheme {
                    EnsembleScheme::Weighted => Some(m.meta_f64(META_VAL_JACCARD, p)?),
                    EnsembleScheme::Unweighted => m.meta_f64(META_VAL_JACCARD, p).ok(),
                };
                jaccards.push(j);
                models.push(m.model);
            }
            let spec = match scheme {
                EnsembleScheme::Unweighted => EnsembleSpec::unweighted(models)?,
                EnsembleScheme::Weighted => {
                    let scores: Vec<f64> = jaccards.iter().map(|j| j.unwrap_or(0.0)).collect();
                    EnsembleSpec::weighted(models, &scores)?
                }
            };
            Ok(Loaded::Ensemble { spec, jaccards })
        }
    }
}

fn member_stems(members: &[ModelGraph<f32>]) -> Vec<String> {
    let names: Vec<&str> = members.iter().map(|m| m.architecture().name()).collect();
    names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            if names.iter().filter(|o| *o == n).count() > 1 {
                format!("{n}_{i}")
            } else {
                n.to_string()
            }
        })
        .collect()
}

fn summary_line(stem: &str, report: &blastoseg::evaluation::TestsetReport) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
    format!(
        "{stem}: micro jaccard {} dice {}, macro jaccard {}, {} images",
        fmt(report.micro.jaccard),
        fmt(report.micro.dice),
        fmt(report.macro_avg.jaccard),
        report.images.len()
    )
}

fn write_overlays(dir: &Path, pairs: &[SamplePair], maps: &[Raster], threshold: f64) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    for (p, m) in pairs.iter().zip(maps) {
        let pred = binarize(m, threshold)?;
        let img = render_overlay(&p.image, &p.mask, &pred)?;
        let path = dir.join(format!("{}_{:03}.png", p.source_id, p.frame_index));
        img.save(&path).map_err(Error::from)?;
    }
    Ok(())
}

/// Report, optional sweep and overlays for one segmenter on the test set.
fn evaluate_one(
    model: &dyn Segmenter,
    stem: &str,
    test: &[SamplePair],
    args: &EvalArgs,
) -> Result<(), Failure> {
    let images: Vec<&Raster> = test.iter().map(|p| &p.image).collect();
    let maps = predict_native(model, &images, DEFAULT_BATCH)?;
    let report = evaluate_maps(stem, test, &maps, args.threshold)?;
    report.write(&args.out, stem)?;
    println!("{}", summary_line(stem, &report));
    if args.sweep {
        let masks: Vec<&Raster> = test.iter().map(|p| &p.mask).collect();
        let table = sweep_maps(&maps, &masks, &SWEEP_GRID)?;
        fs::write(args.out.join(format!("{stem}_sweep.csv")), table.to_csv())?;
        println!(
            "{stem}: best threshold {}, spread over 0.4-0.6 {:.4} ({})",
            table.best_threshold,
            table.band_spread,
            if table.insensitive { "insensitive" } else { "sensitive" }
        );
    }
    if !args.no_overlays {
        write_overlays(&args.out.join("overlays").join(stem), test, &maps, args.threshold)?;
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), Failure> {
    check_threshold(args.threshold)?;
    require_exists(&args.data, "dataset")?;
    let loaded = load_models(&args.checkpoints, args.model)?;
    let (split, _) = read_dataset(&args.data)?;
    fs::create_dir_all(&args.out)?;
    match &loaded {
        Loaded::Single(m) => evaluate_one(m.as_ref(), m.architecture().name(), &split.test, &args)?,
        Loaded::Ensemble { spec, jaccards } => {
            let stems = member_stems(spec.members());
            let mut weights = String::from("member,architecture,val_jaccard,weight\n");
            for (i, ((m, stem), w)) in spec.members().iter().zip(&stems).zip(spec.weights()).enumerate() {
                evaluate_one(m, stem, &split.test, &args)?;
                let j = jaccards[i].map_or_else(|| "undefined".to_string(), |j| j.to_string());
                writeln!(weights, "{i},{},{j},{w}", m.architecture().name()).expect("string");
            }
            fs::write(args.out.join("ensemble_weights.csv"), weights)?;
            evaluate_one(spec, spec.scheme.name(), &split.test, &args)?;
        }
    }
    Ok(())
}

pub fn segment(args: SegmentArgs) -> Result<(), Failure> {
    check_threshold(args.threshold)?;
    require_exists(&args.image, "image")?;
    let loaded = load_models(&args.checkpoints, args.model)?;
    let image = read_png(&args.image)?;
    let maps = predict_native(loaded.segmenter(), &[&image], 1)?;
    let mask = binarize(&maps[0], args.threshold)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_mask_png(&args.out, &mask)?;
    println!(
        "{}: {} foreground pixels of {} -> {}",
        args.image.display(),
        mask.area(),
        mask.len(),
        args.out.display()
    );
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<(), Failure> {
    require_exists(&args.data, "dataset")?;
    let loaded = load_models(&args.checkpoints, args.model)?;
    let (split, _) = read_dataset(&args.data)?;
    let pairs = match args.set {
        SweepSet::Test => split.test,
        SweepSet::Val => {
            // Re-carve the validation split exactly as training did.
            let path = &args.checkpoints[0];
            let ck = Checkpoint::<f32>::load(path)?;
            let meta = |key: &str| -> Result<String, Failure> {
                ck.meta(key)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Checkpoint(format!("{}: no {key} metadata", path.display())).into())
            };
            let seed = match args.seed {
                Some(s) => s,
                None => meta(META_TRAIN_SEED)?
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad {META_TRAIN_SEED} metadata")))?,
            };
            let fraction: f64 = meta(META_VAL_FRACTION)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad {META_VAL_FRACTION} metadata")))?;
            carve_validation(split.train, fraction, seed)?.1
        }
    };
    let images: Vec<&Raster> = pairs.iter().map(|p| &p.image).collect();
    let masks: Vec<&Raster> = pairs.iter().map(|p| &p.mask).collect();
    let maps = predict_native(loaded.segmenter(), &images, DEFAULT_BATCH)?;
    let table = sweep_maps(&maps, &masks, &SWEEP_GRID)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("sweep.csv"), table.to_csv())?;
    print!("{}", table.to_csv());
    println!(
        "best threshold {}, spread over 0.4-0.6 {:.4} ({})",
        table.best_threshold,
        table.band_spread,
        if table.insensitive { "insensitive" } else { "sensitive" }
    );
    Ok(())
}
