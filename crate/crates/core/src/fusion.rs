//! Fusion-mask construction: registered and direct SSIM masks, OR fusion,
//! morphological clean-up, acceptance and crop selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orb::OrbParams;
use crate::raster::{BinaryMask, DepthMap, Rect, RgbImage};
use crate::registration::{register, RansacParams, RegistrationParams, RegistrationResult};
use crate::ssim::{mean_ssim, ssim_map, threshold_map, SsimParams};

/// Odd-sided square structuring element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct SquareKernel(usize);

impl SquareKernel {
    pub fn new(side: usize) -> Result<Self> {
        if side == 0 || side % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "morphology kernel side must be odd, got {side}"
            )));
        }
        Ok(SquareKernel(side))
    }

    pub fn side(&self) -> usize {
        self.0
    }

    fn radius(&self) -> usize {
        self.0 / 2
    }
}

impl TryFrom<usize> for SquareKernel {
    type Error = Error;

    fn try_from(side: usize) -> Result<Self> {
        SquareKernel::new(side)
    }
}

impl From<SquareKernel> for usize {
    fn from(k: SquareKernel) -> usize {
        k.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub ssim_threshold: f64,
    pub min_matches: usize,
    pub min_inliers: usize,
    /// Accept only when the final mask covers strictly more than this.
    pub min_valid_fraction: f64,
    pub crop_size: usize,
    pub morph_kernel: SquareKernel,
    pub orb: OrbParams,
    pub ransac: RansacParams,
}

impl FusionConfig {
    /// Side of the final small-region erosion.
    pub const EROSION_KERNEL: usize = 3;

    pub fn erosion_kernel(&self) -> SquareKernel {
        SquareKernel(Self::EROSION_KERNEL)
    }

    pub fn ssim_params(&self) -> SsimParams {
        SsimParams::with_threshold(self.ssim_threshold)
    }

    pub fn registration_params(&self) -> RegistrationParams {
        RegistrationParams {
            orb: self.orb,
            min_matches: self.min_matches,
            min_inliers: self.min_inliers,
            ransac: self.ransac,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64, name: &str| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        unit(self.ssim_threshold, "ssim_threshold")?;
        unit(self.min_valid_fraction, "min_valid_fraction")?;
        if self.crop_size == 0 {
            return Err(Error::InvalidParameter("crop_size must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            ssim_threshold: 0.85,
            min_matches: 10,
            min_inliers: 10,
            min_valid_fraction: 0.5,
            crop_size: 518,
            morph_kernel: SquareKernel(5),
            orb: OrbParams::default(),
            ransac: RansacParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    /// Final mask in the original image's frame.
    pub mask: BinaryMask,
    pub valid_fraction: f64,
    pub accepted: bool,
    /// Present iff accepted.
    pub crop: Option<Rect>,
    pub registration: RegistrationResult,
    pub mean_ssim_registered: Option<f64>,
    pub mean_ssim_direct: Option<f64>,
}

fn same_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    Ok(())
}

pub fn fuse_or(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    same_dims(a, b)?;
    let bits = a.bits().iter().zip(b.bits()).map(|(x, y)| *x || *y).collect();
    Ok(BinaryMask::from_raw(a.width(), a.height(), bits))
}

/// Square min/max filter that only looks at in-bounds pixels, which makes
/// the border neutral: erosion sees 1 outside, dilation sees 0.
fn rank_filter(m: &BinaryMask, k: SquareKernel, erode: bool) -> BinaryMask {
    let (w, h) = m.dims();
    let r = k.radius();
    let pass = |src: &[bool], len: usize, lines: usize, idx: &dyn Fn(usize, usize) -> usize| {
        let mut out = vec![false; src.len()];
        let mut prefix = vec![0usize; len + 1];
        for line in 0..lines {
            for i in 0..len {
                prefix[i + 1] = prefix[i] + usize::from(src[idx(line, i)]);
            }
            for i in 0..len {
                let lo = i.saturating_sub(r);
                let hi = (i + r + 1).min(len);
                let ones = prefix[hi] - prefix[lo];
                out[idx(line, i)] = if erode { ones == hi - lo } else { ones > 0 };
            }
        }
        out
    };
    let rows = pass(m.bits(), w, h, &|y, x| y * w + x);
    let cols = pass(&rows, h, w, &|x, y| y * w + x);
    BinaryMask::from_raw(w, h, cols)
}

pub fn erode(m: &BinaryMask, k: SquareKernel) -> BinaryMask {
    rank_filter(m, k, true)
}

pub fn dilate(m: &BinaryMask, k: SquareKernel) -> BinaryMask {
    rank_filter(m, k, false)
}

/// Opening (erode then dilate) followed by closing (dilate then erode).
pub fn morph_open_close(m: &BinaryMask, k: SquareKernel) -> BinaryMask {
    let opened = dilate(&erode(m, k), k);
    erode(&dilate(&opened, k), k)
}

pub fn valid_fraction(m: &BinaryMask) -> f64 {
    m.count_ones() as f64 / m.bits().len() as f64
}

/// Tight bounding box of the largest 4-connected component. Equal-sized
/// components resolve to the one whose box origin is smallest in `(y, x)`.
pub fn largest_region_bbox(m: &BinaryMask) -> Option<Rect> {
    let (w, h) = m.dims();
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut best: Option<(usize, Rect)> = None;
    for start in 0..w * h {
        if seen[start] || !m.bits()[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut count, mut x0, mut y0, mut x1, mut y1) = (0usize, w, h, 0usize, 0usize);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            count += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            let mut visit = |j: usize| {
                if !seen[j] && m.bits()[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        let rect = Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
        let better = match &best {
            None => true,
            Some((c, r)) => count > *c || (count == *c && (rect.y, rect.x) < (r.y, r.x)),
        };
        if better {
            best = Some((count, rect));
        }
    }
    best.map(|(_, r)| r)
}

/// Places a `size x size` crop centred on `bbox`, offset by `(jx, jy)` and
/// clamped into the image.
pub fn place_crop(
    bbox: Rect,
    img_w: usize,
    img_h: usize,
    size: usize,
    jx: i64,
    jy: i64,
) -> Option<Rect> {
    if size == 0 || img_w < size || img_h < size {
        return None;
    }
    let axis = |start: usize, len: usize, limit: usize, jitter: i64| {
        let nominal = (2 * start as i64 + len as i64 - size as i64).div_euclid(2);
        (nominal + jitter).clamp(0, (limit - size) as i64) as usize
    };
    Some(Rect::new(
        axis(bbox.x, bbox.width, img_w, jx),
        axis(bbox.y, bbox.height, img_h, jy),
        size,
        size,
    ))
}

/// Random crop centred on the largest region's box, jittered uniformly by up
/// to `size / 4` per axis and clamped into the image. `None` if the image is
/// smaller than the crop or the mask is empty.
pub fn select_crop<R: Rng + ?Sized>(
    m: &BinaryMask,
    img_w: usize,
    img_h: usize,
    size: usize,
    rng: &mut R,
) -> Option<Rect> {
    let j = (size / 4) as i64;
    // Always draw, so the generator advances identically on every path.
    let jx = rng.random_range(-j..=j);
    let jy = rng.random_range(-j..=j);
    let bbox = largest_region_bbox(m)?;
    place_crop(bbox, img_w, img_h, size, jx, jy)
}

/// Runs the full two-branch fusion procedure for one generated image.
pub fn build_fusion_mask<R: Rng + ?Sized>(
    gen: &RgbImage,
    orig: &RgbImage,
    depth_gt: &DepthMap,
    cfg: &FusionConfig,
    rng: &mut R,
) -> Result<FusionOutcome> {
    cfg.validate()?;
    if orig.dims() != depth_gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: orig.dims(),
            found: depth_gt.dims(),
        });
    }
    let (w, h) = orig.dims();
    let ssim = cfg.ssim_params();
    let orig_luma = orig.to_luma();

    let reg = register(gen, orig, &cfg.registration_params(), rng);
    let (registered_mask, mean_registered) = if reg.result.succeeded {
        let map = ssim_map(&reg.warped, &orig_luma, &ssim, Some(&reg.coverage))?;
        (threshold_map(&map, ssim.threshold), mean_ssim(&map).ok())
    } else {
        (BinaryMask::from_raw(w, h, vec![false; w * h]), None)
    };

    let resized = if gen.dims() == orig.dims() {
        gen.clone()
    } else {
        gen.resize_bilinear(w, h)?
    };
    let direct_map = ssim_map(&resized.to_luma(), &orig_luma, &ssim, None)?;
    let direct_mask = threshold_map(&direct_map, ssim.threshold);
    let mean_direct = mean_ssim(&direct_map).ok();

    let fused = fuse_or(&registered_mask, &direct_mask)?;
    let smoothed = morph_open_close(&fused, cfg.morph_kernel);
    let mask = erode(&smoothed, cfg.erosion_kernel());
    let vf = valid_fraction(&mask);
    let crop = select_crop(&mask, w, h, cfg.crop_size, rng);
    let accepted = vf > cfg.min_valid_fraction && crop.is_some();

    Ok(FusionOutcome {
        mask,
        valid_fraction: vf,
        accepted,
        crop: if accepted { crop } else { None },
        registration: reg.result,
        mean_ssim_registered: mean_registered,
        mean_ssim_direct: mean_direct,
    })
}

/// Pixels inside `crop` supervised by ground truth (mask set) and by pseudo
/// labels (mask unset).
pub fn supervision_counts(mask: &BinaryMask, crop: Rect) -> (usize, usize) {
    let mut gt = 0;
    for y in crop.y..crop.y + crop.height {
        for x in crop.x..crop.x + crop.width {
            gt += usize::from(mask.get(x, y));
        }
    }
    (gt, crop.area() - gt)
}
