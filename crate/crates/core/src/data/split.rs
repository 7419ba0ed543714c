use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::raster::SamplePair;
use crate::error::{Error, Result};

pub const TRAIN_RATIO: f64 = 0.75;
pub const VALIDATION_FRACTION: f64 = 0.15;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SamplePair>,
    pub test: Vec<SamplePair>,
    pub seed: u64,
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    Ok(())
}

/// Number of training items for `n` pairs: `floor(ratio · n)`, kept inside
/// `[1, n - 1]` so neither side is empty.
pub fn train_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).floor() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Seeded permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Image-level split: seeded shuffle, then the first `floor(ratio · n)`
/// pairs go to training.
pub fn split_dataset(pairs: Vec<SamplePair>, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    check_ratio(ratio)?;
    if pairs.len() < 2 {
        return Err(Error::Config(format!("need at least 2 pairs to split, got {}", pairs.len())));
    }
    let n_train = train_count(pairs.len(), ratio);
    let mut parts = partition(pairs, &[n_train], seed);
    let test = parts.pop().expect("two parts");
    let train = parts.pop().expect("two parts");
    Ok(DatasetSplit { train, test, seed })
}

/// Blastocyst-level split: whole `source_id` groups are shuffled and moved
/// to training until it holds at least `floor(ratio · n)` pairs. No source
/// appears on both sides.
pub fn split_grouped(pairs: Vec<SamplePair>, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    check_ratio(ratio)?;
    let mut groups: BTreeMap<String, Vec<SamplePair>> = BTreeMap::new();
    for p in pairs {
        groups.entry(p.source_id.clone()).or_default().push(p);
    }
    if groups.len() < 2 {
        return Err(Error::Config(format!(
            "grouped split needs at least 2 sources, got {}",
            groups.len()
        )));
    }
    let total: usize = groups.values().map(Vec::len).sum();
    let target = train_count(total, ratio);
    let mut groups: Vec<Vec<SamplePair>> = groups.into_values().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = Vec::new();
    let mut test = Vec::new();
    let last = groups.len() - 1;
    for (i, g) in groups.into_iter().enumerate() {
        if train.len() < target && i < last {
            train.extend(g);
        } else {
            test.extend(g);
        }
    }
    Ok(DatasetSplit { train, test, seed })
}

/// Shuffles with `seed` and cuts into consecutive parts at the given sizes;
/// the final part takes the remainder.
pub fn partition<T>(items: Vec<T>, sizes: &[usize], seed: u64) -> Vec<Vec<T>> {
    let order = shuffled_indices(items.len(), seed);
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut shuffled = order.into_iter().map(|i| slots[i].take().expect("permutation"));
    let mut out = Vec::with_capacity(sizes.len() + 1);
    for &s in sizes {
        out.push(shuffled.by_ref().take(s).collect());
    }
    out.push(shuffled.collect());
    out
}

/// Carves `round(fraction · n)` validation pairs (at least one when
/// `n ≥ 2`) out of a training list. Returns `(train, validation)`.
pub fn carve_validation(pairs: Vec<SamplePair>, fraction: f64, seed: u64) -> Result<(Vec<SamplePair>, Vec<SamplePair>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {fraction} outside (0, 1)")));
    }
    if pairs.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 training pairs to hold out validation, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len();
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut parts = partition(pairs, &[n_val], seed);
    let train = parts.pop().expect("two parts");
    let val = parts.pop().expect("two parts");
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::raster::Raster;

    fn pairs(n: usize, per_source: usize) -> Vec<SamplePair> {
        (0..n)
            .map(|i| {
                let img = Raster::filled(2, 2, i as f32);
                let mask = Raster::filled(2, 2, 0.0);
                SamplePair::new(img, mask, format!("b{}", i / per_source), i % per_source).unwrap()
            })
            .collect()
    }

    #[test]
    fn floor_rule_counts() {
        assert_eq!(train_count(617, 0.75), 462);
        assert_eq!(train_count(4, 0.75), 3);
        assert_eq!(train_count(2, 0.75), 1);
        let s = split_dataset(pairs(617, 31), 0.75, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (462, 155));
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let a = split_dataset(pairs(40, 10), 0.75, 9).unwrap();
        let b = split_dataset(pairs(40, 10), 0.75, 9).unwrap();
        assert_eq!(a, b);
        let mut seen: Vec<u32> = a.train.iter().chain(&a.test).map(|p| p.image.get(0, 0) as u32).collect();
        seen.sort();
        assert_eq!(seen, (0..40).collect::<Vec<_>>());
        let c = split_dataset(pairs(40, 10), 0.75, 10).unwrap();
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(split_dataset(Vec::new(), 0.75, 0).is_err());
        assert!(split_dataset(pairs(1, 1), 0.75, 0).is_err());
        assert!(split_dataset(pairs(5, 1), 1.0, 0).is_err());
        assert!(split_grouped(pairs(5, 5), 0.75, 0).is_err());
    }

    #[test]
    fn grouped_split_keeps_sources_apart() {
        let s = split_grouped(pairs(60, 6), 0.75, 4).unwrap();
        assert_eq!(s.train.len() + s.test.len(), 60);
        assert!(s.train.len() >= 45);
        for t in &s.test {
            assert!(s.train.iter().all(|p| p.source_id != t.source_id));
        }
    }

    #[test]
    fn validation_carve() {
        let (train, val) = carve_validation(pairs(200, 10), 0.2, 3).unwrap();
        assert_eq!((train.len(), val.len()), (160, 40));
        let (train, val) = carve_validation(pairs(462, 31), VALIDATION_FRACTION, 3).unwrap();
        assert_eq!((train.len(), val.len()), (393, 69));
    }
}
