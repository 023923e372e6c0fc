//! Gaussian-windowed SSIM maps, thresholding and mean SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Side of the square window; odd.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    /// Per-pixel similarity threshold, compared with strict `>`.
    pub threshold: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
            threshold: 0.85,
        }
    }
}

impl SsimParams {
    pub fn with_threshold(threshold: f64) -> Self {
        SsimParams {
            threshold,
            ..Default::default()
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "SSIM window must be odd, got {}",
                self.window
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter("SSIM sigma must be positive".into()));
        }
        if !(self.c1() > 0.0 && self.c2() > 0.0) {
            return Err(Error::InvalidParameter(
                "SSIM stabilising constants must be positive".into(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "SSIM threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    /// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn gaussian_taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as isize;
        let raw: Vec<f64> = (-r..=r)
            .map(|i| (-((i * i) as f64) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

/// Per-pixel SSIM with a coverage flag. Uncovered pixels hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    coverage: Vec<bool>,
}

impl SsimMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coverage(&self) -> &[bool] {
        &self.coverage
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn is_covered(&self, x: usize, y: usize) -> bool {
        self.coverage[y * self.width + x]
    }

    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|c| **c).count()
    }

    /// Assembles a map from raw parts (e.g. for tests or externally computed
    /// maps).
    pub fn from_parts(
        width: usize,
        height: usize,
        values: Vec<f64>,
        coverage: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if n == 0 || values.len() != n || coverage.len() != n {
            return Err(Error::InvalidParameter("SSIM map parts are inconsistent".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("SSIM values must be finite".into()));
        }
        Ok(SsimMap {
            width,
            height,
            values,
            coverage,
        })
    }
}

/// Separable convolution with edge replication.
fn blur(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = taps.len() / 2;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    let mut padded = vec![0.0; w + 2 * r];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (i, p) in padded.iter_mut().enumerate() {
            *p = row[clamp(i as isize - r as isize, w)];
        }
        for (x, t_out) in tmp[y * w..(y + 1) * w].iter_mut().enumerate() {
            let window = &padded[x..x + taps.len()];
            *t_out = taps.iter().zip(window).fold(0.0, |acc, (t, v)| acc + t * v);
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (k, t) in taps.iter().enumerate() {
            let sy = clamp(y as isize + k as isize - r as isize, h);
            for (d, v) in dst.iter_mut().zip(&tmp[sy * w..(sy + 1) * w]) {
                *d += t * v;
            }
        }
    }
    out
}

/// Marks pixels whose (edge-clamped) window touches no uncovered pixel.
fn window_coverage(mask: &BinaryMask, radius: usize) -> Vec<bool> {
    let (w, h) = mask.dims();
    // Summed-area table of uncovered pixels, (w+1)x(h+1).
    let stride = w + 1;
    let mut sat = vec![0u32; stride * (h + 1)];
    for y in 0..h {
        let mut run = 0u32;
        for x in 0..w {
            run += u32::from(!mask.get(x, y));
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + run;
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(w);
            let bad = sat[y1 * stride + x1] + sat[y0 * stride + x0]
                - sat[y0 * stride + x1]
                - sat[y1 * stride + x0];
            out.push(bad == 0);
        }
    }
    out
}

/// Computes the per-pixel SSIM map of two equally sized luma images.
///
/// Local means, variances and covariance use the Gaussian window with edge
/// replication. When `coverage` is given, any pixel whose window reaches an
/// uncovered pixel is itself uncovered and holds value 0.
pub fn ssim_map(
    a: &GrayImage,
    b: &GrayImage,
    params: &SsimParams,
    coverage: Option<&BinaryMask>,
) -> Result<SsimMap> {
    params.validate()?;
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    if let Some(c) = coverage {
        if c.dims() != a.dims() {
            return Err(Error::DimensionMismatch {
                expected: a.dims(),
                found: c.dims(),
            });
        }
    }
    let (w, h) = a.dims();
    let taps = params.gaussian_taps();
    let (c1, c2) = (params.c1(), params.c2());

    let xa = a.data();
    let xb = b.data();
    let aa: Vec<f64> = xa.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = xb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = xa.iter().zip(xb).map(|(p, q)| p * q).collect();

    let mu_a = blur(xa, w, h, &taps);
    let mu_b = blur(xb, w, h, &taps);
    let e_aa = blur(&aa, w, h, &taps);
    let e_bb = blur(&bb, w, h, &taps);
    let e_ab = blur(&ab, w, h, &taps);

    let cover = match coverage {
        Some(m) => window_coverage(m, params.window / 2),
        None => vec![true; w * h],
    };

    let values = (0..w * h)
        .map(|i| {
            if !cover[i] {
                return 0.0;
            }
            ssim_from_moments(mu_a[i], mu_b[i], e_aa[i], e_bb[i], e_ab[i], c1, c2)
        })
        .collect();
    Ok(SsimMap {
        width: w,
        height: h,
        values,
        coverage: cover,
    })
}

/// SSIM from windowed first and second raw moments. The expression is
/// symmetric in its two operands term by term, so swapping them is exact.
#[inline]
pub(crate) fn ssim_from_moments(
    mu_a: f64,
    mu_b: f64,
    e_aa: f64,
    e_bb: f64,
    e_ab: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    let var_a = e_aa - mu_a * mu_a;
    let var_b = e_bb - mu_b * mu_b;
    let cov = e_ab - mu_a * mu_b;
    let num = (2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2);
    let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
    (num / den).clamp(-1.0, 1.0)
}

/// Bit is set iff the pixel is covered and its SSIM is strictly above `tau`.
pub fn threshold_map(map: &SsimMap, tau: f64) -> BinaryMask {
    let bits = map
        .values
        .iter()
        .zip(&map.coverage)
        .map(|(v, c)| *c && *v > tau)
        .collect();
    BinaryMask::from_raw(map.width, map.height, bits)
}

/// Mean SSIM over covered pixels.
pub fn mean_ssim(map: &SsimMap) -> Result<f64> {
    let (sum, n) = map
        .values
        .iter()
        .zip(&map.coverage)
        .filter(|(_, c)| **c)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 {
        return Err(Error::Empty("SSIM map has no covered pixels"));
    }
    Ok(sum / n as f64)
}
