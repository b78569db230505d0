//! Dense image primitives.
//!
//! Intensities are kept as `f64` in `[0, 1]` inside the crate; quantization to
//! 8 bits only happens in the PGM writer. Derivative images and smoothed
//! obstacle planes can leave that range, so they live in a plain [`Raster`].

mod filter;
mod otsu;
mod pgm;

use std::ops::Deref;

use crate::error::{Error, Result};

pub use filter::{convolve, gaussian_blur, gaussian_blur_columns, gaussian_kernel, spatial_gradient, Axis};
pub use otsu::{otsu_split, otsu_threshold, OtsuSplit, DEFAULT_BINS};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};

/// Row-major real-valued raster with no range constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "raster data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Raster { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        Raster {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Raster { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn same_size(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear sample with clamp-to-edge outside the raster.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = x - x0 as f64;
        let ay = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - ax) + self.get(x1, y0) * ax;
        let bottom = self.get(x0, y1) * (1.0 - ax) + self.get(x1, y1) * ax;
        top * (1.0 - ay) + bottom * ay
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Single-channel intensity image with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    raster: Raster,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Self::try_from(Raster::new(width, height, data)?)
    }

    /// Build from a raster, clamping every value into `[0, 1]`.
    ///
    /// NaN samples become 0.
    pub fn from_raster_clamped(mut raster: Raster) -> Self {
        for v in raster.data_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        GrayImage { raster }
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::from_raster_clamped(Raster::from_fn(width, height, f))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_raster_clamped(Raster::filled(width, height, value))
    }

    /// Luma conversion from interleaved 8-bit RGB.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "rgb buffer length {} does not match {width}x{height}x3",
                rgb.len()
            )));
        }
        let data = rgb
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
            .collect();
        Ok(Self::from_raster_clamped(Raster::new(width, height, data)?))
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }
}

impl Deref for GrayImage {
    type Target = Raster;

    fn deref(&self) -> &Raster {
        &self.raster
    }
}

impl TryFrom<Raster> for GrayImage {
    type Error = Error;

    fn try_from(raster: Raster) -> Result<Self> {
        if let Some(i) = raster.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "intensity {} at index {i} outside [0, 1]",
                raster.data()[i]
            )));
        }
        Ok(GrayImage { raster })
    }
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        BinaryImage {
            width,
            height,
            mask: vec![false; width * height],
        }
    }

    pub fn from_mask(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || mask.len() != width * height {
            return Err(Error::invalid(format!(
                "mask length {} does not match {width}x{height}",
                mask.len()
            )));
        }
        Ok(BinaryImage { width, height, mask })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.mask[y * self.width + x] = value;
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    /// Sets every pixel whose center lies within `radius` of `(cx, cy)`.
    pub fn fill_disk(&mut self, cx: f64, cy: f64, radius: f64) {
        if radius < 0.0 {
            return;
        }
        let r2 = radius * radius;
        let x0 = (cx - radius).floor().max(0.0) as usize;
        let y0 = (cy - radius).floor().max(0.0) as usize;
        let x1 = ((cx + radius).ceil() as isize).min(self.width as isize - 1);
        let y1 = ((cy + radius).ceil() as isize).min(self.height as isize - 1);
        if x1 < 0 || y1 < 0 {
            return;
        }
        for y in y0..=y1 as usize {
            let dy = y as f64 - cy;
            for x in x0..=x1 as usize {
                let dx = x as f64 - cx;
                if dx * dx + dy * dy <= r2 {
                    self.set(x, y, true);
                }
            }
        }
    }

    pub fn to_raster(&self) -> Raster {
        let data = self.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Raster {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_image_rejects_out_of_range() {
        assert!(GrayImage::new(2, 1, vec![0.0, 1.5]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.0, 1.0]).is_ok());
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Raster::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn luma_weights() {
        let img = GrayImage::from_rgb8(2, 1, &[255, 0, 0, 0, 0, 255]).unwrap();
        assert!((img.get(0, 0) - 0.299).abs() < 1e-12);
        assert!((img.get(1, 0) - 0.114).abs() < 1e-12);
    }

    #[test]
    fn bilinear_midpoint() {
        let r = Raster::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!((r.sample_bilinear(0.5, 0.5) - 1.5).abs() < 1e-12);
        assert_eq!(r.sample_bilinear(-3.0, 0.0), 0.0);
        assert_eq!(r.sample_bilinear(5.0, 5.0), 3.0);
    }

    #[test]
    fn disk_fill_stays_in_radius() {
        let mut m = BinaryImage::new(20, 20);
        m.fill_disk(10.0, 10.0, 3.0);
        for y in 0..20 {
            for x in 0..20 {
                let d = ((x as f64 - 10.0).powi(2) + (y as f64 - 10.0).powi(2)).sqrt();
                assert_eq!(m.get(x, y), d <= 3.0);
            }
        }
        // partially outside the frame
        m.fill_disk(-1.0, 0.0, 2.0);
        assert!(m.get(0, 0));
    }
}
