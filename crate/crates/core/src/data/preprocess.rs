use crate::data::raster::Raster;

/// Floor on the standard deviation used by [`normalize`].
pub const STD_FLOOR: f64 = 1e-6;

/// Per-image z-score with population statistics.
pub fn normalize(image: &Raster) -> Raster {
    let n = image.len().max(1) as f64;
    let mean = image.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = image.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(STD_FLOOR);
    image.map(|v| ((v as f64 - mean) / sd) as f32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeKind {
    /// Bilinear, for gray-level images and probability maps.
    Image,
    /// Nearest neighbour, for masks; never introduces new values.
    Mask,
}

/// Source coordinate of destination pixel centre `i` when mapping `src`
/// pixels onto `dst` pixels (half-pixel alignment).
#[inline]
fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5
}

/// Resizes to `width`×`height`. Nearest neighbour picks the source pixel
/// whose area contains the destination centre; bilinear clamps at edges.
pub fn resize(r: &Raster, width: usize, height: usize, kind: ResizeKind) -> Raster {
    let (sw, sh) = (r.width(), r.height());
    if (sw, sh) == (width, height) {
        return r.clone();
    }
    match kind {
        ResizeKind::Mask => {
            let xs: Vec<usize> = (0..width)
                .map(|x| (((x as f64 + 0.5) * sw as f64 / width as f64) as usize).min(sw - 1))
                .collect();
            Raster::from_fn(width, height, |x, y| {
                let sy = (((y as f64 + 0.5) * sh as f64 / height as f64) as usize).min(sh - 1);
                r.get(xs[x], sy)
            })
        }
        ResizeKind::Image => {
            let axis = |i: usize, s: usize, d: usize| {
                let c = source_coord(i, s, d).clamp(0.0, (s - 1) as f64);
                let i0 = c.floor() as usize;
                let i1 = (i0 + 1).min(s - 1);
                (i0, i1, c - i0 as f64)
            };
            let xs: Vec<_> = (0..width).map(|x| axis(x, sw, width)).collect();
            Raster::from_fn(width, height, |x, y| {
                let (y0, y1, fy) = axis(y, sh, height);
                let (x0, x1, fx) = xs[x];
                let top = r.get(x0, y0) as f64 * (1.0 - fx) + r.get(x1, y0) as f64 * fx;
                let bottom = r.get(x0, y1) as f64 * (1.0 - fx) + r.get(x1, y1) as f64 * fx;
                (top * (1.0 - fy) + bottom * fy) as f32
            })
        }
    }
}

/// Thresholds a probability raster: positive iff `p ≥ threshold`.
pub fn binarize_raster(p: &Raster, threshold: f64) -> Raster {
    p.map(|v| if v as f64 >= threshold { 1.0 } else { 0.0 })
}
