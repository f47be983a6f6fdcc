//! Image and depth containers, file codecs and colorspace conversion.
//!
//! Pixel data is stored as interleaved `f64` samples, row-major, top row first.

mod codec;
mod lab;

use std::ops::Deref;

pub use codec::{
    decode_depth, decode_pfm, decode_pgm, decode_png_gray, decode_png_rgb, decode_ppm, encode_pfm,
    encode_pgm16, encode_png_rgb, encode_ppm, load_depth, load_rgb, quantize, save_depth, save_rgb,
    write_atomic, Format,
};
pub use lab::{rgb_to_lab, srgb_to_linear, LabImage};

use crate::error::{Error, Result};

/// A dense multi-channel grid of finite samples with no range restriction.
///
/// Intermediate stages of the formation model (for example the sum of back
/// and forward scatter) may leave `[0, 1]`, so they live here rather than in
/// [`RgbImage`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidData(format!(
                "field dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidData("field dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::LengthMismatch(format!(
                "field {width}x{height}x{channels} needs {expected} samples, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Field {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && channels > 0);
        Field {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds a field by evaluating `f(x, y, c)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(width > 0 && height > 0 && channels > 0);
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Field {
            width,
            height,
            channels,
            data,
        }
    }

    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Field {
            width,
            height,
            channels,
            data,
        }
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
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = (y * self.width + x) * self.channels + c;
        self.data[i] = v;
    }

    /// Sample lookup with coordinates clamped to the border (replicate padding).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y, c)
    }

    /// Copies out one channel as a `width * height` plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        assert!(c < self.channels);
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Stacks the channels of `self` and `other` per pixel.
    pub fn concat(&self, other: &Field) -> Result<Field> {
        ensure_same_dims(self.dims(), other.dims())?;
        let channels = self.channels + other.channels;
        let mut data = Vec::with_capacity(self.width * self.height * channels);
        for (a, b) in self
            .data
            .chunks_exact(self.channels)
            .zip(other.data.chunks_exact(other.channels))
        {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Ok(Field::from_raw(self.width, self.height, channels, data))
    }

    /// Elementwise combination of two fields with identical shape.
    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        ensure_same_dims(self.dims(), other.dims())?;
        if self.channels != other.channels {
            return Err(Error::DimensionMismatch {
                left: format!("{} channels", self.channels),
                right: format!("{} channels", other.channels),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Field::from_raw(
            self.width,
            self.height,
            self.channels,
            data,
        ))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Mirrors the field left to right.
    pub fn flip_horizontal(&self) -> Field {
        Field::from_fn(self.width, self.height, self.channels, |x, y, c| {
            self.get(self.width - 1 - x, y, c)
        })
    }
}

pub(crate) fn ensure_same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::dims(a, b))
    }
}

/// A three-channel RGB image with every sample finite and inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage(Field);

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let field = Field::new(width, height, 3, data)?;
        Self::try_from_field(field)
    }

    pub fn try_from_field(field: Field) -> Result<Self> {
        if field.channels != 3 {
            return Err(Error::InvalidData(format!(
                "RGB image needs 3 channels, got {}",
                field.channels
            )));
        }
        if let Some(i) = field.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidData(format!(
                "sample {} at index {i} outside [0, 1]",
                field.data[i]
            )));
        }
        Ok(RgbImage(field))
    }

    /// Clamps every sample of a 3-channel field into `[0, 1]`.
    pub fn from_field_clamped(field: &Field) -> Result<Self> {
        if field.channels != 3 {
            return Err(Error::InvalidData(format!(
                "RGB image needs 3 channels, got {}",
                field.channels
            )));
        }
        Ok(RgbImage(field.map(|v| v.clamp(0.0, 1.0))))
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        [self.get(x, y, 0), self.get(x, y, 1), self.get(x, y, 2)]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.0.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn as_field(&self) -> &Field {
        &self.0
    }

    pub fn into_field(self) -> Field {
        self.0
    }

    pub fn flip_horizontal(&self) -> RgbImage {
        RgbImage(self.0.flip_horizontal())
    }

    /// ITU-R BT.601 luma plane, `width * height` samples.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels()
            .map(|[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect()
    }
}

impl Deref for RgbImage {
    type Target = Field;

    fn deref(&self) -> &Field {
        &self.0
    }
}

/// Normalized depth in `[0, 1]`; physical scale is absorbed by the coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidData(format!(
                "depth dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::LengthMismatch(format!(
                "depth {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data
            .iter()
            .position(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidData(format!(
                "depth {} at index {i} outside [0, 1]",
                data[i]
            )));
        }
        Ok(DepthMap {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, d: f64) -> Result<Self> {
        Self::new(width, height, vec![d; width * height])
    }

    /// Builds a depth map without the `[0, 1]` range check, for probing the
    /// asymptotic behaviour of the formation model (for example `d = 50`).
    pub fn unnormalized(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::LengthMismatch(format!(
                "depth {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidData(
                "depth must be finite and non-negative".into(),
            ));
        }
        Ok(DepthMap {
            width,
            height,
            data,
        })
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
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn flip_horizontal(&self) -> DepthMap {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        DepthMap {
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
    fn rgb_rejects_out_of_range() {
        assert!(RgbImage::new(1, 1, vec![0.0, 1.0, 1.0 + 1e-9]).is_err());
        assert!(RgbImage::new(1, 1, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(RgbImage::new(0, 1, vec![]).is_err());
        assert!(RgbImage::new(2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn concat_interleaves_channels() {
        let a = Field::from_fn(2, 1, 3, |x, _, c| (x * 10 + c) as f64);
        let b = Field::from_fn(2, 1, 1, |x, _, _| -(x as f64) - 1.0);
        let ab = a.concat(&b).unwrap();
        assert_eq!(ab.channels(), 4);
        assert_eq!(ab.data(), &[0.0, 1.0, 2.0, -1.0, 10.0, 11.0, 12.0, -2.0]);
    }

    #[test]
    fn clamped_lookup_replicates_border() {
        let f = Field::from_fn(3, 2, 1, |x, y, _| (y * 3 + x) as f64);
        assert_eq!(f.get_clamped(-4, 0, 0), 0.0);
        assert_eq!(f.get_clamped(7, 1, 0), 5.0);
        assert_eq!(f.get_clamped(1, -1, 0), 1.0);
    }

    #[test]
    fn depth_range_checked() {
        assert!(DepthMap::new(1, 1, vec![1.5]).is_err());
        assert!(DepthMap::new(1, 1, vec![-0.1]).is_err());
        assert!(DepthMap::unnormalized(1, 1, vec![50.0]).is_ok());
    }

    #[test]
    fn flips_are_involutions() {
        let f = Field::from_fn(3, 2, 3, |x, y, c| (x + 7 * y + 31 * c) as f64);
        assert_eq!(f.flip_horizontal().flip_horizontal(), f);
        let d = DepthMap::new(3, 1, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(d.flip_horizontal().data(), &[0.3, 0.2, 0.1]);
    }
}
