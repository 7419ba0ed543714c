//! PNG rasters and the on-disk dataset layout.
//!
//! A dataset directory holds `manifest.toml` plus one folder per set:
//! `<set>/<source_id>/<frame>.png` for the image and
//! `<set>/<source_id>/<frame>_mask.png` for its mask. Sets are `train` and
//! `test`; the manifest records every pair and, for phantom data, the generator settings
//! that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::data::phantom::PhantomSetSpec;
use crate::data::raster::{Raster, SamplePair};
use crate::data::split::DatasetSplit;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.toml";

/// Reads any PNG as 8-bit grayscale.
pub fn read_png(path: &Path) -> Result<Raster> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Raster::new(w as usize, h as usize, img.into_raw().into_iter().map(f32::from).collect())
}

/// Writes gray levels rounded and clamped to 0–255.
pub fn write_png(path: &Path, r: &Raster) -> Result<()> {
    let img = GrayImage::from_fn(r.width() as u32, r.height() as u32, |x, y| {
        Luma([r.get(x as usize, y as usize).round().clamp(0.0, 255.0) as u8])
    });
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    img.save(path)?;
    Ok(())
}

/// Reads a mask PNG; gray levels of 128 and above are foreground.
pub fn read_mask_png(path: &Path) -> Result<Raster> {
    Ok(read_png(path)?.map(|v| if v >= 128.0 { 1.0 } else { 0.0 }))
}

/// Writes a binary mask as 0/255.
pub fn write_mask_png(path: &Path, mask: &Raster) -> Result<()> {
    write_png(path, &mask.map(|v| if v >= 0.5 { 255.0 } else { 0.0 }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub set: String,
    pub source_id: String,
    pub frame: usize,
    pub image: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRecord {
    pub ratio: f64,
    pub seed: u64,
    pub grouped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<PhantomSetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitRecord>,
    pub pairs: Vec<ManifestEntry>,
}

fn entry(set: &str, p: &SamplePair) -> ManifestEntry {
    let base = format!("{set}/{}/{}", p.source_id, p.frame_index);
    ManifestEntry {
        set: set.to_string(),
        source_id: p.source_id.clone(),
        frame: p.frame_index,
        image: format!("{base}.png"),
        mask: format!("{base}_mask.png"),
    }
}

/// Writes every pair and the manifest under `dir`.
pub fn write_dataset(
    dir: &Path,
    split: &DatasetSplit,
    record: SplitRecord,
    generator: Option<PhantomSetSpec>,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut pairs = Vec::new();
    for (set, list) in [("train", &split.train), ("test", &split.test)] {
        for p in list {
            let e = entry(set, p);
            write_png(&dir.join(&e.image), &p.image)?;
            write_mask_png(&dir.join(&e.mask), &p.mask)?;
            pairs.push(e);
        }
    }
    let manifest = Manifest {
        generator,
        split: Some(record),
        pairs,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    fs::write(dir.join(MANIFEST), text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}

/// Loads the pairs of one set in manifest order.
pub fn read_set(dir: &Path, manifest: &Manifest, set: &str) -> Result<Vec<SamplePair>> {
    manifest
        .pairs
        .iter()
        .filter(|e| e.set == set)
        .map(|e| {
            let image = read_png(&resolve(dir, &e.image))?;
            let mask = read_mask_png(&resolve(dir, &e.mask))?;
            SamplePair::new(image, mask, e.source_id.clone(), e.frame)
        })
        .collect()
}

/// Loads the train and test sets recorded in `dir/manifest.toml`.
pub fn read_dataset(dir: &Path) -> Result<(DatasetSplit, Manifest)> {
    let manifest = read_manifest(dir)?;
    let train = read_set(dir, &manifest, "train")?;
    let test = read_set(dir, &manifest, "test")?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "{} lists {} train and {} test pairs; both sets must be non-empty",
            dir.join(MANIFEST).display(),
            train.len(),
            test.len()
        )));
    }
    let seed = manifest.split.as_ref().map_or(0, |s| s.seed);
    Ok((DatasetSplit { train, test, seed }, manifest))
}
