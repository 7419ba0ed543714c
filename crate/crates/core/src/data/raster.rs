use crate::error::{Error, Result};
use crate::numerics::{Shape, Tensor4D};

/// Single-channel image. Gray levels are on the 0–255 scale; masks hold
/// exactly 0 and 1.
#[derive(Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dim("raster data length", width * height, data.len()));
        }
        Ok(Raster { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Raster {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Raster { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims(&self, other: &Raster) -> Result<()> {
        if self.height != other.height {
            return Err(Error::dim("height", self.height, other.height));
        }
        if self.width != other.width {
            return Err(Error::dim("width", self.width, other.width));
        }
        Ok(())
    }

    /// True when every value is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Number of foreground (value ≥ 0.5) pixels.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v >= 0.5).count()
    }

    /// 1×1×h×w tensor.
    pub fn to_tensor(&self) -> Tensor4D<f32> {
        Tensor4D::new(Shape::new(1, 1, self.height, self.width), self.data.clone()).expect("sized")
    }

    /// Plane `(n, c)` of a tensor as a raster.
    pub fn from_plane(t: &Tensor4D<f32>, n: usize, c: usize) -> Self {
        let s = t.shape();
        Raster {
            width: s.w,
            height: s.h,
            data: t.plane(n, c).to_vec(),
        }
    }
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Raster[{}x{}]", self.width, self.height)
    }
}

/// One annotated frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub image: Raster,
    pub mask: Raster,
    pub source_id: String,
    pub frame_index: usize,
}

impl SamplePair {
    pub fn new(image: Raster, mask: Raster, source_id: impl Into<String>, frame_index: usize) -> Result<Self> {
        image.same_dims(&mask)?;
        if !mask.is_binary() {
            return Err(Error::Validation(format!(
                "mask for {} frame {frame_index} is not two-valued",
                image_label(&mask)
            )));
        }
        Ok(SamplePair {
            image,
            mask,
            source_id: source_id.into(),
            frame_index,
        })
    }

    /// `<source_id>/<frame>` label used in reports.
    pub fn label(&self) -> String {
        format!("{}/{}", self.source_id, self.frame_index)
    }
}

fn image_label(r: &Raster) -> String {
    format!("{}x{} raster", r.width, r.height)
}
