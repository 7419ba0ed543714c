//! Synthetic zona-ablated blastocyst frames with exact masks.
//!
//! Geometry of one blastocyst: a bright zona annulus broken by a slit, a
//! body ellipse inside it, and a lobe disc outside the slit joined to the
//! body by a straight neck through the gap. Over the frames every shape grows
//! and contains its previous self, so the mask only ever gains pixels.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::raster::{Raster, SamplePair};
use crate::error::{Error, Result};

pub const BACKGROUND: f32 = 40.0;
pub const ZONA_LEVEL: f32 = 185.0;
const BODY_LEVEL: f64 = 112.0;
const RIM_BOOST: f64 = 30.0;
const ICM_BOOST: f64 = 25.0;
const TEXTURE: f64 = 12.0;

/// Geometry and rendering parameters of one phantom blastocyst. Lengths are
/// in pixels, angles in radians; `_start`/`_end` pairs are interpolated
/// linearly over the frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub image_size: usize,
    pub frames: usize,
    pub center: [f64; 2],
    pub body_axes_start: [f64; 2],
    pub body_axes_end: [f64; 2],
    pub body_orientation: f64,
    pub zona_inner_radius: f64,
    pub zona_thickness: f64,
    pub slit_angle: f64,
    pub slit_width: f64,
    pub neck_half_width: f64,
    pub lobe_radius_start: f64,
    pub lobe_radius_end: f64,
    /// Distance from `center` to the lobe centre along the slit direction.
    pub lobe_offset_start: f64,
    pub lobe_offset_end: f64,
    pub noise_level: f64,
    pub debris_count: usize,
    pub seed: u64,
}

/// Shape parameters of one frame.
#[derive(Clone, Copy, Debug)]
pub struct FrameGeometry {
    pub center: [f64; 2],
    pub axes: [f64; 2],
    pub orientation: f64,
    pub direction: [f64; 2],
    pub neck_half_width: f64,
    pub lobe_radius: f64,
    pub lobe_offset: f64,
}

impl FrameGeometry {
    pub fn in_body(&self, x: f64, y: f64) -> bool {
        self.body_radius(x, y) <= 1.0
    }

    /// Normalised elliptical radius (1 on the body boundary).
    fn body_radius(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let (s, c) = self.orientation.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        ((u / self.axes[0]).powi(2) + (v / self.axes[1]).powi(2)).sqrt()
    }

    pub fn lobe_center(&self) -> [f64; 2] {
        [
            self.center[0] + self.direction[0] * self.lobe_offset,
            self.center[1] + self.direction[1] * self.lobe_offset,
        ]
    }

    pub fn in_lobe(&self, x: f64, y: f64) -> bool {
        let [lx, ly] = self.lobe_center();
        (x - lx).hypot(y - ly) <= self.lobe_radius
    }

    pub fn in_neck(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let along = dx * self.direction[0] + dy * self.direction[1];
        let across = -dx * self.direction[1] + dy * self.direction[0];
        (0.0..=self.lobe_offset).contains(&along) && across.abs() <= self.neck_half_width
    }

    /// Ground-truth membership: body, neck or lobe.
    pub fn in_mask(&self, x: f64, y: f64) -> bool {
        self.in_body(x, y) || self.in_lobe(x, y) || self.in_neck(x, y)
    }
}

impl PhantomSpec {
    pub fn zona_outer_radius(&self) -> f64 {
        self.zona_inner_radius + self.zona_thickness
    }

    fn progress(&self, frame: usize) -> f64 {
        if self.frames <= 1 {
            0.0
        } else {
            frame as f64 / (self.frames - 1) as f64
        }
    }

    pub fn geometry(&self, frame: usize) -> FrameGeometry {
        let t = self.progress(frame);
        let lerp = |a: f64, b: f64| a + (b - a) * t;
        FrameGeometry {
            center: self.center,
            axes: [
                lerp(self.body_axes_start[0], self.body_axes_end[0]),
                lerp(self.body_axes_start[1], self.body_axes_end[1]),
            ],
            orientation: self.body_orientation,
            direction: [self.slit_angle.cos(), self.slit_angle.sin()],
            neck_half_width: self.neck_half_width,
            lobe_radius: lerp(self.lobe_radius_start, self.lobe_radius_end),
            lobe_offset: lerp(self.lobe_offset_start, self.lobe_offset_end),
        }
    }

    /// Zona membership: inside the annulus and outside the slit wedge.
    pub fn in_zona(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let r = dx.hypot(dy);
        if r < self.zona_inner_radius || r > self.zona_outer_radius() {
            return false;
        }
        let mut d = (dy.atan2(dx) - self.slit_angle).rem_euclid(TAU);
        if d > PI {
            d = TAU - d;
        }
        d > self.slit_width / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("phantom spec: {m}")));
        if self.image_size < 8 {
            return bad(format!("image size {} below 8", self.image_size));
        }
        if self.frames == 0 {
            return bad("needs at least one frame".into());
        }
        let lengths = [
            self.body_axes_start[0],
            self.body_axes_start[1],
            self.zona_inner_radius,
            self.zona_thickness,
            self.neck_half_width,
            self.lobe_radius_start,
        ];
        if lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("lengths must be positive".into());
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad(format!("noise level {}", self.noise_level));
        }
        if !(self.slit_width > 0.0 && self.slit_width < PI) {
            return bad(format!("slit width {} outside (0, pi)", self.slit_width));
        }
        if self.body_axes_end[0] < self.body_axes_start[0] || self.body_axes_end[1] < self.body_axes_start[1] {
            return bad("body axes shrink".into());
        }
        if self.body_axes_end[0].max(self.body_axes_end[1]) > self.zona_inner_radius {
            return bad("body outgrows the zona".into());
        }
        let slit_half_chord = self.zona_inner_radius * (self.slit_width / 2.0).sin();
        if self.neck_half_width > slit_half_chord {
            return bad(format!(
                "neck half-width {:.3} exceeds slit half-opening {:.3}",
                self.neck_half_width, slit_half_chord
            ));
        }
        let grow_r = self.lobe_radius_end - self.lobe_radius_start;
        let grow_d = self.lobe_offset_end - self.lobe_offset_start;
        if grow_r < 0.0 || grow_d < 0.0 || grow_d > grow_r {
            return bad("lobe must grow at least as fast as it moves outward".into());
        }
        if self.lobe_offset_start <= self.zona_outer_radius() {
            return bad("lobe centre must lie outside the zona".into());
        }
        if self.lobe_offset_start - self.lobe_radius_start > self.zona_outer_radius() {
            return bad("lobe is detached from the slit".into());
        }
        let end = self.geometry(self.frames - 1);
        let [lx, ly] = end.lobe_center();
        let size = self.image_size as f64;
        let r = end.lobe_radius;
        let zr = self.zona_outer_radius();
        let (cx, cy) = (self.center[0], self.center[1]);
        if lx - r < 0.0 || ly - r < 0.0 || lx + r > size || ly + r > size {
            return bad("lobe leaves the image".into());
        }
        if cx - zr < 0.0 || cy - zr < 0.0 || cx + zr > size || cy + zr > size {
            return bad("zona leaves the image".into());
        }
        Ok(())
    }

    /// Random plausible geometry for an image of `image_size` pixels.
    pub fn sample(image_size: usize, frames: usize, noise_level: f64, debris_count: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = image_size as f64;
        for _ in 0..64 {
            let slit_angle = rng.random_range(0.0..TAU);
            let dir = [slit_angle.cos(), slit_angle.sin()];
            let back = 0.05 * s;
            let center = [
                s / 2.0 - dir[0] * back + rng.random_range(-0.02..0.02) * s,
                s / 2.0 - dir[1] * back + rng.random_range(-0.02..0.02) * s,
            ];
            let inner = rng.random_range(0.20..0.24) * s;
            let thickness = rng.random_range(0.03..0.045) * s;
            let a1 = rng.random_range(0.85..0.97) * inner;
            let b1 = a1 * rng.random_range(0.85..1.0);
            let a0 = a1 * rng.random_range(0.70..0.85);
            let b0 = b1 * rng.random_range(0.70..0.85);
            let slit_width = rng.random_range(0.5..0.8);
            let neck = inner * (slit_width / 2.0f64).sin() * rng.random_range(0.6..0.9);
            let r0 = rng.random_range(0.035..0.055) * s;
            let r1 = r0 + rng.random_range(0.025..0.05) * s;
            let outer = inner + thickness;
            let d0 = outer + r0 * rng.random_range(0.3..0.8);
            let d1 = d0 + (r1 - r0) * rng.random_range(0.5..1.0);
            let spec = PhantomSpec {
                image_size,
                frames,
                center,
                body_axes_start: [a0, b0],
                body_axes_end: [a1, b1],
                body_orientation: rng.random_range(0.0..PI),
                zona_inner_radius: inner,
                zona_thickness: thickness,
                slit_angle,
                slit_width,
                neck_half_width: neck,
                lobe_radius_start: r0,
                lobe_radius_end: r1,
                lobe_offset_start: d0,
                lobe_offset_end: d1,
                noise_level,
                debris_count,
                seed,
            };
            if spec.validate().is_ok() {
                return Ok(spec);
            }
        }
        Err(Error::Validation(format!(
            "could not place a phantom in a {image_size}-pixel image"
        )))
    }

    /// Mask of one frame, sampled at pixel centres.
    pub fn mask(&self, frame: usize) -> Raster {
        let g = self.geometry(frame);
        let n = self.image_size;
        Raster::from_fn(n, n, |x, y| {
            if g.in_mask(x as f64 + 0.5, y as f64 + 0.5) {
                1.0
            } else {
                0.0
            }
        })
    }
}

struct Debris {
    center: [f64; 2],
    radius: f64,
    level: f64,
}

struct Texture {
    freq: [f64; 2],
    phase: [f64; 2],
    icm: [f64; 2],
    icm_radius: f64,
}

/// Renders every frame of one blastocyst.
pub fn generate_phantoms(spec: &PhantomSpec, source_id: &str) -> Result<Vec<SamplePair>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let n = spec.image_size;
    let size = n as f64;
    let texture = Texture {
        freq: [rng.random_range(0.25..0.45), rng.random_range(0.25..0.45)],
        phase: [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)],
        icm: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
        icm_radius: rng.random_range(0.3..0.45),
    };
    let last = spec.mask(spec.frames - 1);
    let mut debris = Vec::new();
    for _ in 0..spec.debris_count {
        for _ in 0..100 {
            let radius = (rng.random_range(0.008..0.025) * size).max(1.0);
            let center = [rng.random_range(0.0..size), rng.random_range(0.0..size)];
            let level = rng.random_range(60.0..200.0);
            if disc_avoids(&last, center, radius + 1.0) {
                debris.push(Debris { center, radius, level });
                break;
            }
        }
    }
    let noise = Normal::new(0.0, spec.noise_level.max(0.0)).expect("finite sigma");

    let mut pairs = Vec::with_capacity(spec.frames);
    for frame in 0..spec.frames {
        let g = spec.geometry(frame);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        noise_rng.set_stream(2 + frame as u64);
        let mask = spec.mask(frame);
        let mut image = Raster::filled(n, n, 0.0);
        for y in 0..n {
            for x in 0..n {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut v = if mask.get(x, y) == 1.0 {
                    cell_level(&g, &texture, px, py)
                } else if spec.in_zona(px, py) {
                    ZONA_LEVEL as f64
                } else {
                    debris
                        .iter()
                        .find(|d| (px - d.center[0]).hypot(py - d.center[1]) <= d.radius)
                        .map_or(BACKGROUND as f64, |d| d.level)
                };
                if spec.noise_level > 0.0 {
                    v += noise.sample(&mut noise_rng);
                }
                image.set(x, y, v.round().clamp(0.0, 255.0) as f32);
            }
        }
        pairs.push(SamplePair::new(image, mask, source_id, frame)?);
    }
    Ok(pairs)
}

/// Intensity inside the mask: textured cytoplasm, a brighter rim near the
/// body boundary and a brighter inner cell mass. Always above background.
fn cell_level(g: &FrameGeometry, t: &Texture, x: f64, y: f64) -> f64 {
    let mut v = BODY_LEVEL + TEXTURE * (t.freq[0] * x + t.phase[0]).sin() * (t.freq[1] * y + t.phase[1]).sin();
    let r = g.body_radius(x, y);
    if (0.85..=1.0).contains(&r) {
        v += RIM_BOOST;
    }
    let (s, c) = g.orientation.sin_cos();
    let icx = g.center[0] + g.axes[0] * (c * t.icm[0]) - g.axes[1] * (s * t.icm[1]);
    let icy = g.center[1] + g.axes[0] * (s * t.icm[0]) + g.axes[1] * (c * t.icm[1]);
    if (x - icx).hypot(y - icy) <= t.icm_radius * g.axes[0].min(g.axes[1]) {
        v += ICM_BOOST;
    }
    if !g.in_body(x, y) {
        // lobe and neck: thin trophectoderm, slightly darker
        v -= 8.0;
    }
    v
}

fn disc_avoids(mask: &Raster, center: [f64; 2], radius: f64) -> bool {
    let n = mask.width() as isize;
    let x0 = (center[0] - radius).floor() as isize;
    let x1 = (center[0] + radius).ceil() as isize;
    let y0 = (center[1] - radius).floor() as isize;
    let y1 = (center[1] + radius).ceil() as isize;
    for y in y0.max(0)..y1.min(n) {
        for x in x0.max(0)..x1.min(n) {
            let d = (x as f64 + 0.5 - center[0]).hypot(y as f64 + 0.5 - center[1]);
            if d <= radius && mask.get(x as usize, y as usize) == 1.0 {
                return false;
            }
        }
    }
    true
}

/// Recipe for a whole phantom dataset: `blastocysts` independent random
/// geometries with `frames` frames each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSetSpec {
    pub blastocysts: usize,
    pub frames: usize,
    pub image_size: usize,
    pub noise_level: f64,
    pub debris_count: usize,
    pub seed: u64,
}

impl Default for PhantomSetSpec {
    fn default() -> Self {
        PhantomSetSpec {
            blastocysts: 20,
            frames: 31,
            image_size: 500,
            noise_level: 12.0,
            debris_count: 6,
            seed: 0,
        }
    }
}

impl PhantomSetSpec {
    pub fn source_id(index: usize) -> String {
        format!("b{index:03}")
    }

    /// Per-blastocyst specs, each with its own derived seed.
    pub fn specs(&self) -> Result<Vec<PhantomSpec>> {
        if self.blastocysts == 0 {
            return Err(Error::Config("phantom set needs at least one blastocyst".into()));
        }
        (0..self.blastocysts)
            .map(|i| {
                let seed = self.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                PhantomSpec::sample(self.image_size, self.frames, self.noise_level, self.debris_count, seed)
            })
            .collect()
    }

    pub fn generate(&self) -> Result<Vec<SamplePair>> {
        let mut out = Vec::with_capacity(self.blastocysts * self.frames);
        for (i, spec) in self.specs()?.iter().enumerate() {
            out.extend(generate_phantoms(spec, &Self::source_id(i))?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(size: usize, seed: u64) -> PhantomSpec {
        PhantomSpec::sample(size, 30, 10.0, 4, seed).unwrap()
    }

    #[test]
    fn thirty_frames_with_growing_area() {
        let s = spec(96, 5);
        let pairs = generate_phantoms(&s, "b0").unwrap();
        assert_eq!(pairs.len(), 30);
        let areas: Vec<usize> = pairs.iter().map(|p| p.mask.area()).collect();
        assert!(areas.windows(2).all(|w| w[0] <= w[1]), "{areas:?}");
        assert!(areas[29] > areas[0]);
        for (i, p) in pairs.iter().enumerate() {
            assert_eq!(p.frame_index, i);
            assert!(p.mask.is_binary());
        }
    }

    #[test]
    fn same_seed_same_pixels() {
        let s = spec(64, 11);
        assert_eq!(generate_phantoms(&s, "x").unwrap(), generate_phantoms(&s, "x").unwrap());
        let other = spec(64, 12);
        assert_ne!(generate_phantoms(&s, "x").unwrap()[0].image, generate_phantoms(&other, "x").unwrap()[0].image);
    }

    #[test]
    fn inconsistent_geometry_is_rejected() {
        let good = spec(128, 2);
        let mut wide = good.clone();
        wide.neck_half_width = good.zona_inner_radius;
        assert!(matches!(wide.validate(), Err(Error::Validation(_))));
        let mut detached = good.clone();
        detached.lobe_offset_start = good.zona_outer_radius() + good.lobe_radius_start + 5.0;
        detached.lobe_offset_end = detached.lobe_offset_start;
        assert!(detached.validate().is_err());
        let mut fat = good.clone();
        fat.body_axes_end = [good.zona_inner_radius * 1.1, good.body_axes_end[1]];
        assert!(fat.validate().is_err());
        let mut shrinking = good.clone();
        shrinking.lobe_offset_end = good.lobe_offset_start + (good.lobe_radius_end - good.lobe_radius_start) * 2.0;
        assert!(shrinking.validate().is_err());
    }

    #[test]
    fn slit_opens_the_zona() {
        let s = spec(200, 8);
        let r = s.zona_inner_radius + s.zona_thickness / 2.0;
        let at = |a: f64| (s.center[0] + r * a.cos(), s.center[1] + r * a.sin());
        let (x, y) = at(s.slit_angle);
        assert!(!s.in_zona(x, y));
        let (x, y) = at(s.slit_angle + PI);
        assert!(s.in_zona(x, y));
    }

    #[test]
    fn set_spec_names_sources() {
        let set = PhantomSetSpec {
            blastocysts: 3,
            frames: 2,
            image_size: 48,
            ..PhantomSetSpec::default()
        };
        let pairs = set.generate().unwrap();
        assert_eq!(pairs.len(), 6);
        assert_eq!(pairs[4].source_id, "b002");
    }
}
