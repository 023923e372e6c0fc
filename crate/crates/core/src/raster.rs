//! Raster containers shared by every stage: 8-bit RGB images, floating luma,
//! depth and disparity grids with validity, and binary masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_dims(width: usize, height: usize) -> Result<usize> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "raster dimensions must be positive, got {width}x{height}"
        )));
    }
    width
        .checked_mul(height)
        .ok_or_else(|| Error::InvalidParameter(format!("raster {width}x{height} overflows")))
}

fn check_len(expected: usize, found: usize, what: &str) -> Result<()> {
    if expected != found {
        return Err(Error::InvalidParameter(format!(
            "{what} length {found} does not match expected {expected}"
        )));
    }
    Ok(())
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Rect {
            x,
            y,
            width,
            height,
        }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.x + self.width <= width && self.y + self.height <= height
    }
}

/// 8-bit RGB image, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        let n = check_dims(width, height)?;
        check_len(n * 3, data.len(), "rgb data")?;
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let n = check_dims(width, height)?;
        Ok(RgbImage {
            width,
            height,
            data: rgb.iter().copied().cycle().take(n * 3).collect(),
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let n = check_dims(width, height)?;
        let mut data = Vec::with_capacity(n * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Rec.601 luma, `0.299 R + 0.587 G + 0.114 B`.
    pub fn to_luma(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| {
                // Integer weights keep pure white at exactly 255.
                let v = 299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32;
                v as f64 / 1000.0
            })
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        let src: Vec<f64> = self.data.iter().map(|&v| v as f64).collect();
        let out = resample_bilinear(&src, self.width, self.height, 3, width, height);
        Ok(RgbImage {
            width,
            height,
            data: out
                .into_iter()
                .map(|v| v.round().clamp(0.0, 255.0) as u8)
                .collect(),
        })
    }
}

/// Floating-point luma image with values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let n = check_dims(width, height)?;
        check_len(n, data.len(), "luma data")?;
        if let Some(bad) = data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 255.0)
        {
            return Err(Error::InvalidParameter(format!(
                "luma value {bad} outside [0, 255]"
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        let n = check_dims(width, height)?;
        GrayImage::new(width, height, vec![value; n])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let n = check_dims(width, height)?;
        let mut data = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        let out = resample_bilinear(&self.data, self.width, self.height, 1, width, height);
        Ok(GrayImage {
            width,
            height,
            data: out.into_iter().map(|v| v.clamp(0.0, 255.0)).collect(),
        })
    }

    /// Crate-internal constructor for data already known to satisfy the
    /// range invariant.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        GrayImage {
            width,
            height,
            data,
        }
    }
}

/// Bilinear resampling with half-pixel-centred coordinates and edge clamping.
pub(crate) fn resample_bilinear(
    src: &[f64],
    sw: usize,
    sh: usize,
    channels: usize,
    dw: usize,
    dh: usize,
) -> Vec<f64> {
    let axis = |d: usize, s_len: usize, d_len: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * (s_len as f64 / d_len as f64) - 0.5)
            .clamp(0.0, (s_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(s_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..dw).map(|x| axis(x, sw, dw)).collect();
    let mut out = Vec::with_capacity(dw * dh * channels);
    for y in 0..dh {
        let (y0, y1, fy) = axis(y, sh, dh);
        for &(x0, x1, fx) in &xs {
            for c in 0..channels {
                let at = |xx: usize, yy: usize| src[(yy * sw + xx) * channels + c];
                let top = lerp(at(x0, y0), at(x1, y0), fx);
                let bottom = lerp(at(x0, y1), at(x1, y1), fx);
                out.push(lerp(top, bottom, fy));
            }
        }
    }
    out
}

/// Linear interpolation that never leaves `[min(a, b), max(a, b)]`.
#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (a + t * (b - a)).clamp(a.min(b), a.max(b))
}

macro_rules! scalar_grid_accessors {
    () => {
        pub fn width(&self) -> usize {
            self.width
        }

        pub fn height(&self) -> usize {
            self.height
        }

        pub fn dims(&self) -> (usize, usize) {
            (self.width, self.height)
        }

        pub fn len(&self) -> usize {
            self.values.len()
        }

        pub fn is_empty(&self) -> bool {
            self.values.is_empty()
        }

        /// Raw values; invalid pixels hold `0.0`.
        pub fn values(&self) -> &[f64] {
            &self.values
        }

        pub fn valid(&self) -> &[bool] {
            &self.valid
        }

        #[inline]
        pub fn get(&self, x: usize, y: usize) -> Option<f64> {
            let i = y * self.width + x;
            self.valid[i].then(|| self.values[i])
        }

        pub fn valid_count(&self) -> usize {
            self.valid.iter().filter(|v| **v).count()
        }
    };
}

/// Per-pixel depth with a validity mask. Valid pixels are finite and `> 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a depth map, marking non-finite and non-positive values invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let n = check_dims(width, height)?;
        check_len(n, values.len(), "depth values")?;
        let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        Ok(Self::normalized(width, height, values, valid))
    }

    /// Builds a depth map from explicit validity. Every pixel flagged valid
    /// must hold a finite positive value.
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = check_dims(width, height)?;
        check_len(n, values.len(), "depth values")?;
        check_len(n, valid.len(), "depth validity")?;
        if let Some((v, _)) = values
            .iter()
            .zip(&valid)
            .find(|(v, ok)| **ok && !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "valid depth pixel holds {v}; depths must be finite and > 0"
            )));
        }
        Ok(Self::normalized(width, height, values, valid))
    }

    fn normalized(width: usize, height: usize, mut values: Vec<f64>, valid: Vec<bool>) -> Self {
        for (v, ok) in values.iter_mut().zip(&valid) {
            if !ok {
                *v = 0.0;
            }
        }
        DepthMap {
            width,
            height,
            values,
            valid,
        }
    }

    scalar_grid_accessors!();

    pub fn to_disparity(&self) -> DisparityMap {
        let values = self
            .values
            .iter()
            .zip(&self.valid)
            .map(|(v, ok)| if *ok { 1.0 / v } else { 0.0 })
            .collect();
        DisparityMap {
            width: self.width,
            height: self.height,
            values,
            valid: self.valid.clone(),
        }
    }
}

/// Per-pixel inverse depth with a validity mask. Valid pixels are finite and
/// `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DisparityMap {
    /// Builds a disparity map, marking non-finite and negative values invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let n = check_dims(width, height)?;
        check_len(n, values.len(), "disparity values")?;
        let valid = values.iter().map(|v| v.is_finite() && *v >= 0.0).collect();
        Ok(Self::normalized(width, height, values, valid))
    }

    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = check_dims(width, height)?;
        check_len(n, values.len(), "disparity values")?;
        check_len(n, valid.len(), "disparity validity")?;
        if let Some((v, _)) = values
            .iter()
            .zip(&valid)
            .find(|(v, ok)| **ok && !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "valid disparity pixel holds {v}; disparities must be finite and >= 0"
            )));
        }
        Ok(Self::normalized(width, height, values, valid))
    }

    fn normalized(width: usize, height: usize, mut values: Vec<f64>, valid: Vec<bool>) -> Self {
        for (v, ok) in values.iter_mut().zip(&valid) {
            if !ok {
                *v = 0.0;
            }
        }
        DisparityMap {
            width,
            height,
            values,
            valid,
        }
    }

    scalar_grid_accessors!();

    /// Inverts back to depth. Zero disparities become invalid depth.
    pub fn to_depth(&self) -> DepthMap {
        let valid: Vec<bool> = self
            .values
            .iter()
            .zip(&self.valid)
            .map(|(v, ok)| *ok && *v > 0.0)
            .collect();
        let values = self
            .values
            .iter()
            .zip(&valid)
            .map(|(v, ok)| if *ok { 1.0 / v } else { 0.0 })
            .collect();
        DepthMap {
            width: self.width,
            height: self.height,
            values,
            valid,
        }
    }
}

/// Converts depth to inverse depth; invalid pixels stay invalid.
pub fn depth_to_disparity(depth: &DepthMap) -> DisparityMap {
    depth.to_disparity()
}

/// Per-pixel `{0, 1}` mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        let n = check_dims(width, height)?;
        check_len(n, bits.len(), "mask bits")?;
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        let n = check_dims(width, height)?;
        Ok(BinaryMask {
            width,
            height,
            bits: vec![false; n],
        })
    }

    pub fn ones(width: usize, height: usize) -> Result<Self> {
        let n = check_dims(width, height)?;
        Ok(BinaryMask {
            width,
            height,
            bits: vec![true; n],
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let n = check_dims(width, height)?;
        let mut bits = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// `self ⊆ other`, pixelwise.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub(crate) fn from_raw(width: usize, height: usize, bits: Vec<bool>) -> Self {
        debug_assert_eq!(bits.len(), width * height);
        BinaryMask {
            width,
            height,
            bits,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_of_primaries() {
        let white = RgbImage::filled(1, 1, [255, 255, 255]).unwrap().to_luma();
        assert_eq!(white.data()[0], 255.0);
        let red = RgbImage::filled(1, 1, [255, 0, 0]).unwrap().to_luma();
        assert!((red.data()[0] - 0.299 * 255.0).abs() < 1e-12);
        assert_eq!(red.data()[0], 76.245);
        let black = RgbImage::filled(1, 1, [0, 0, 0]).unwrap().to_luma();
        assert_eq!(black.data()[0], 0.0);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = GrayImage::from_fn(7, 5, |x, y| ((x * 31 + y * 17) % 256) as f64).unwrap();
        let same = img.resize_bilinear(7, 5).unwrap();
        for (a, b) in img.data().iter().zip(same.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
        let c = GrayImage::filled(5, 3, 42.5).unwrap();
        for (w, h) in [(1, 1), (13, 2), (4, 9)] {
            assert!(c.resize_bilinear(w, h).unwrap().data().iter().all(|v| *v == 42.5));
        }
        let rgb = RgbImage::filled(3, 3, [10, 20, 30]).unwrap();
        let up = rgb.resize_bilinear(8, 5).unwrap();
        assert!(up.data().chunks(3).all(|p| p == [10, 20, 30]));
    }

    #[test]
    fn resize_upsample_row_is_monotone() {
        let img = GrayImage::new(2, 1, vec![0.0, 100.0]).unwrap();
        let up = img.resize_bilinear(4, 1).unwrap();
        // Half-pixel centres: source coordinates -0.25, 0.25, 0.75, 1.25.
        assert_eq!(up.data(), &[0.0, 25.0, 75.0, 100.0]);
        assert!(up.data().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn resize_rejects_zero_target() {
        let img = GrayImage::filled(2, 2, 1.0).unwrap();
        assert!(img.resize_bilinear(0, 2).is_err());
        assert!(RgbImage::filled(2, 2, [0; 3]).unwrap().resize_bilinear(2, 0).is_err());
    }

    #[test]
    fn disparity_conversion() {
        let d = DepthMap::from_values(3, 1, vec![2.0, 1.0, 0.0]).unwrap();
        let disp = depth_to_disparity(&d);
        assert_eq!(disp.get(0, 0), Some(0.5));
        assert_eq!(disp.get(1, 0), Some(1.0));
        assert_eq!(disp.get(2, 0), None);
    }

    #[test]
    fn invalid_contents_are_normalized() {
        let a = DepthMap::new(2, 1, vec![1.0, 7.0], vec![true, false]).unwrap();
        let b = DepthMap::new(2, 1, vec![1.0, -3.0], vec![true, false]).unwrap();
        assert_eq!(a, b);
        assert!(DepthMap::new(1, 1, vec![0.0], vec![true]).is_err());
    }

    #[test]
    fn constructors_validate() {
        assert!(RgbImage::new(2, 2, vec![0; 11]).is_err());
        assert!(GrayImage::new(1, 1, vec![256.0]).is_err());
        assert!(GrayImage::new(1, 1, vec![f64::NAN]).is_err());
        assert!(BinaryMask::zeros(0, 3).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn disparity_round_trip(values in proptest::collection::vec(1e-3f64..1e3, 12)) {
                let d = DepthMap::from_values(4, 3, values.clone()).unwrap();
                let back = d.to_disparity().to_depth();
                for (a, b) in values.iter().zip(back.values()) {
                    prop_assert!(((a - b) / a).abs() <= 1e-9);
                }
            }

            #[test]
            fn resize_stays_in_range(
                data in proptest::collection::vec(0.0f64..=255.0, 20),
                w in 1usize..30,
                h in 1usize..30,
            ) {
                let img = GrayImage::new(5, 4, data.clone()).unwrap();
                let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let out = img.resize_bilinear(w, h).unwrap();
                prop_assert!(out.data().iter().all(|v| *v >= lo && *v <= hi));
            }

            #[test]
            fn luma_in_range(p in any::<[u8; 3]>()) {
                let v = RgbImage::filled(1, 1, p).unwrap().to_luma().data()[0];
                prop_assert!((0.0..=255.0).contains(&v));
            }
        }
    }
}
