use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::preprocess::ResizeKind;
use crate::data::raster::{Raster, SamplePair};

pub const MAX_ROTATION_DEG: f64 = 270.0;
pub const MAX_SHIFT: f64 = 0.10;
pub const ZOOM_RANGE: (f64, f64) = (0.9, 1.1);

/// One geometric transform about the image centre. The forward map sends an
/// input point `p` (centre-relative) to `zoom · R(rotation) · F(p) + shift`,
/// where `F` applies the flips and shifts are fractions of width and height.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub rotation_deg: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub zoom: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            flip_horizontal: false,
            flip_vertical: false,
            rotation_deg: 0.0,
            shift_x: 0.0,
            shift_y: 0.0,
            zoom: 1.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        AugmentParams {
            flip_horizontal: rng.random(),
            flip_vertical: rng.random(),
            rotation_deg: rng.random_range(0.0..=MAX_ROTATION_DEG),
            shift_x: rng.random_range(-MAX_SHIFT..=MAX_SHIFT),
            shift_y: rng.random_range(-MAX_SHIFT..=MAX_SHIFT),
            zoom: rng.random_range(ZOOM_RANGE.0..=ZOOM_RANGE.1),
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Continuous source index `(sx, sy)` read by output pixel `(x, y)`.
    pub fn source_of(&self, x: usize, y: usize, width: usize, height: usize) -> (f64, f64) {
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let u = x as f64 + 0.5 - cx - self.shift_x * width as f64;
        let v = y as f64 + 0.5 - cy - self.shift_y * height as f64;
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        // inverse rotation, then undo zoom
        let mut pu = (cos * u + sin * v) / self.zoom;
        let mut pv = (-sin * u + cos * v) / self.zoom;
        if self.flip_horizontal {
            pu = -pu;
        }
        if self.flip_vertical {
            pv = -pv;
        }
        (pu + cx - 0.5, pv + cy - 0.5)
    }

    /// Resamples `r` under this transform with zero fill outside the frame.
    pub fn apply(&self, r: &Raster, kind: ResizeKind) -> Raster {
        let (w, h) = (r.width(), r.height());
        let fetch = |ix: isize, iy: isize| -> f64 {
            if ix < 0 || iy < 0 || ix >= w as isize || iy >= h as isize {
                0.0
            } else {
                r.get(ix as usize, iy as usize) as f64
            }
        };
        Raster::from_fn(w, h, |x, y| {
            let (sx, sy) = self.source_of(x, y, w, h);
            match kind {
                ResizeKind::Mask => fetch((sx + 0.5).floor() as isize, (sy + 0.5).floor() as isize) as f32,
                ResizeKind::Image => {
                    let (x0, y0) = (sx.floor(), sy.floor());
                    let (fx, fy) = (sx - x0, sy - y0);
                    let (ix, iy) = (x0 as isize, y0 as isize);
                    let top = fetch(ix, iy) * (1.0 - fx) + fetch(ix + 1, iy) * fx;
                    let bottom = fetch(ix, iy + 1) * (1.0 - fx) + fetch(ix + 1, iy + 1) * fx;
                    (top * (1.0 - fy) + bottom * fy) as f32
                }
            }
        })
    }

    pub fn apply_pair(&self, pair: &SamplePair) -> SamplePair {
        SamplePair {
            image: self.apply(&pair.image, ResizeKind::Image),
            mask: self.apply(&pair.mask, ResizeKind::Mask),
            source_id: pair.source_id.clone(),
            frame_index: pair.frame_index,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with indices (epoch, sample, ...) into an independent
/// seed, so per-sample randomness does not depend on processing order.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ p))
}

/// Draws a fresh transform from `seed` and applies it to both rasters.
pub fn augment(pair: &SamplePair, seed: u64) -> SamplePair {
    AugmentParams::from_seed(seed).apply_pair(pair)
}
