//! Oriented FAST keypoints with steered BRIEF descriptors, and brute-force
//! Hamming matching with a mutual cross-check.

mod fast;
mod pattern;

use std::cmp::Ordering;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GrayImage;

pub use fast::{fast_corners, FastCorner};

/// Smallest image side the detector accepts.
pub const MIN_IMAGE_SIDE: usize = 31;
/// Radius of the circular patch used for orientation.
pub const PATCH_RADIUS: usize = 15;
/// Keypoints closer than this to a level's border are discarded so that the
/// orientation patch and the rotated sampling pattern stay inside the image.
const EDGE: usize = 19;
const HARRIS_BLOCK_RADIUS: usize = 3;
const HARRIS_K: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbParams {
    pub max_features: usize,
    pub fast_threshold: f64,
    pub levels: usize,
    pub scale_factor: f64,
}

impl Default for OrbParams {
    fn default() -> Self {
        OrbParams {
            max_features: 1000,
            fast_threshold: 20.0,
            levels: 8,
            scale_factor: 1.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Position in full-resolution pixel coordinates.
    pub x: f64,
    pub y: f64,
    pub octave: usize,
    /// Orientation in radians, `[0, 2π)`.
    pub angle: f64,
    /// Harris corner response at the detection level.
    pub response: f64,
}

/// 256-bit binary descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Descriptor256(pub [u64; 4]);

impl Descriptor256 {
    #[inline]
    pub fn hamming(&self, other: &Descriptor256) -> u32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    fn set_bit(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbFeature {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor256,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub hamming: u32,
}

struct Level {
    image: GrayImage,
    smoothed: Vec<f64>,
    // Full-resolution size divided by level size, per axis.
    ratio: (f64, f64),
}

fn build_pyramid(img: &GrayImage, params: &OrbParams) -> Vec<Level> {
    let (w0, h0) = img.dims();
    let mut levels = Vec::with_capacity(params.levels);
    let mut current = img.clone();
    for k in 0..params.levels {
        if k > 0 {
            let s = params.scale_factor.powi(k as i32);
            let w = (w0 as f64 / s).round() as usize;
            let h = (h0 as f64 / s).round() as usize;
            if w < 2 * EDGE + 1 || h < 2 * EDGE + 1 {
                break;
            }
            current = current
                .resize_bilinear(w, h)
                .expect("pyramid level dimensions are positive");
        }
        let (w, h) = current.dims();
        let smoothed = gaussian_blur_7(current.data(), w, h);
        levels.push(Level {
            ratio: (w0 as f64 / w as f64, h0 as f64 / h as f64),
            image: current.clone(),
            smoothed,
        });
    }
    levels
}

/// 7x7 Gaussian (sigma 2) smoothing with edge replication, applied before
/// descriptor sampling.
fn gaussian_blur_7(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let raw: Vec<f64> = (-3i32..=3)
        .map(|i| (-(i * i) as f64 / 8.0).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    let taps: Vec<f64> = raw.iter().map(|v| v / sum).collect();
    let cl = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * src[y * w + cl(x as isize + k as isize - 3, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[cl(y as isize + k as isize - 3, h) * w + x])
                .sum();
        }
    }
    out
}

fn harris_response(img: &GrayImage, x: usize, y: usize) -> f64 {
    let r = HARRIS_BLOCK_RADIUS as isize;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    let p = |dx: isize, dy: isize| img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
    for dy in -r..=r {
        for dx in -r..=r {
            let gx = (p(dx + 1, dy - 1) + 2.0 * p(dx + 1, dy) + p(dx + 1, dy + 1))
                - (p(dx - 1, dy - 1) + 2.0 * p(dx - 1, dy) + p(dx - 1, dy + 1));
            let gy = (p(dx - 1, dy + 1) + 2.0 * p(dx, dy + 1) + p(dx + 1, dy + 1))
                - (p(dx - 1, dy - 1) + 2.0 * p(dx, dy - 1) + p(dx + 1, dy - 1));
            sxx += gx * gx;
            syy += gy * gy;
            sxy += gx * gy;
        }
    }
    sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy) * (sxx + syy)
}

/// Orientation of the intensity centroid over a disc of radius 15.
fn centroid_angle(img: &GrayImage, x: usize, y: usize) -> f64 {
    let r = PATCH_RADIUS as isize;
    let (mut m10, mut m01) = (0.0, 0.0);
    for dy in -r..=r {
        let span = (((r * r - dy * dy) as f64).sqrt()) as isize;
        for dx in -span..=span {
            let v = img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
            m10 += dx as f64 * v;
            m01 += dy as f64 * v;
        }
    }
    let a = m01.atan2(m10);
    let a = if a < 0.0 { a + TAU } else { a };
    if a >= TAU {
        0.0
    } else {
        a
    }
}

fn steered_brief(smoothed: &[f64], w: usize, x: usize, y: usize, angle: f64) -> Descriptor256 {
    let (s, c) = angle.sin_cos();
    let sample = |px: i8, py: i8| {
        let (px, py) = (px as f64, py as f64);
        let rx = (c * px - s * py).round() as isize;
        let ry = (s * px + c * py).round() as isize;
        smoothed[(y as isize + ry) as usize * w + (x as isize + rx) as usize]
    };
    let mut d = Descriptor256::default();
    for (i, p) in pattern::BRIEF_PAIRS.iter().enumerate() {
        if sample(p[0], p[1]) < sample(p[2], p[3]) {
            d.set_bit(i);
        }
    }
    d
}

/// Detects up to `params.max_features` ORB features.
///
/// FAST-9 corners are found on every pyramid level, non-maximum suppressed,
/// ranked by Harris response across all levels, then oriented and described.
/// The output order is by descending response with ties broken by
/// `(octave, y, x)`, so results are fully reproducible.
pub fn detect_orb(img: &GrayImage, params: &OrbParams) -> Result<Vec<OrbFeature>> {
    let (w, h) = img.dims();
    if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
        return Err(Error::InvalidParameter(format!(
            "ORB needs at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE} pixels, got {w}x{h}"
        )));
    }
    if params.levels == 0 || !(params.scale_factor > 1.0) {
        return Err(Error::InvalidParameter(
            "ORB pyramid needs at least one level and a scale factor above 1".into(),
        ));
    }
    let pyramid = build_pyramid(img, params);

    struct Candidate {
        level: usize,
        x: usize,
        y: usize,
        response: f64,
    }
    let mut candidates = Vec::new();
    for (level, lv) in pyramid.iter().enumerate() {
        for c in fast_corners(&lv.image, params.fast_threshold, EDGE) {
            candidates.push(Candidate {
                level,
                x: c.x,
                y: c.y,
                response: harris_response(&lv.image, c.x, c.y),
            });
        }
    }
    candidates.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.level.cmp(&b.level))
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    candidates.truncate(params.max_features);

    Ok(candidates
        .into_iter()
        .map(|c| {
            let lv = &pyramid[c.level];
            let angle = centroid_angle(&lv.image, c.x, c.y);
            let descriptor = steered_brief(&lv.smoothed, lv.image.width(), c.x, c.y, angle);
            OrbFeature {
                keypoint: Keypoint {
                    x: (c.x as f64 + 0.5) * lv.ratio.0 - 0.5,
                    y: (c.y as f64 + 0.5) * lv.ratio.1 - 0.5,
                    octave: c.level,
                    angle,
                    response: c.response,
                },
                descriptor,
            }
        })
        .collect())
}

fn nearest(query: &Descriptor256, set: &[Descriptor256]) -> Option<(usize, u32)> {
    set.iter()
        .enumerate()
        .map(|(j, d)| (j, query.hamming(d)))
        // min_by keeps the first of equal elements, i.e. the smallest index.
        .min_by(|a, b| match a.1.cmp(&b.1) {
            Ordering::Equal => a.0.cmp(&b.0),
            o => o,
        })
}

/// Brute-force nearest neighbours by Hamming distance, keeping only mutual
/// nearest pairs. Ties resolve to the lowest index. Output is ordered by
/// `index_a`.
pub fn match_descriptors(a: &[Descriptor256], b: &[Descriptor256]) -> Vec<Match> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let back: Vec<usize> = b
        .iter()
        .map(|d| nearest(d, a).expect("a is non-empty").0)
        .collect();
    a.iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let (j, dist) = nearest(d, b)?;
            (back[j] == i).then_some(Match {
                index_a: i,
                index_b: j,
                hamming: dist,
            })
        })
        .collect()
}
