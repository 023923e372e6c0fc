//! Feature-based registration of a generated image onto its original:
//! ORB matching, RANSAC affine estimation and inverse-mapped warping.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orb::{detect_orb, match_descriptors, Descriptor256, OrbParams};
use crate::raster::{lerp, BinaryMask, GrayImage, RgbImage};

const MIN_DET: f64 = 1e-12;
/// Twice the triangle area (px²) below which a 3-point sample is treated as
/// collinear.
const MIN_SAMPLE_AREA: f64 = 1e-6;

/// Row-major 2x3 affine map `(x, y, 1) -> (x', y')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform(pub [f64; 6]);

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn translation(dx: f64, dy: f64) -> Self {
        AffineTransform([1.0, 0.0, dx, 0.0, 1.0, dy])
    }

    /// Rotation by `angle` radians about `(cx, cy)`.
    pub fn rotation_about(angle: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        AffineTransform([c, -s, cx - c * cx + s * cy, s, c, cy - s * cx - c * cy])
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5])
    }

    pub fn det(&self) -> f64 {
        self.0[0] * self.0[4] - self.0[1] * self.0[3]
    }

    pub fn translation_part(&self) -> (f64, f64) {
        (self.0[2], self.0[5])
    }

    pub fn is_invertible(&self) -> bool {
        self.0.iter().all(|v| v.is_finite()) && self.det().abs() > MIN_DET
    }

    pub fn inverse(&self) -> Result<Self> {
        if !self.is_invertible() {
            return Err(Error::Degenerate(format!(
                "affine transform is singular (det {})",
                self.det()
            )));
        }
        let [a, b, tx, c, d, ty] = self.0;
        let det = self.det();
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(AffineTransform([
            ia,
            ib,
            -(ia * tx + ib * ty),
            ic,
            id,
            -(ic * tx + id * ty),
        ]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub iterations: usize,
    /// Reprojection error (px) below which a pair is an inlier.
    pub inlier_px: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            iterations: 1000,
            inlier_px: 3.0,
        }
    }
}

type Point = (f64, f64);

fn solve3(m: [[f64; 3]; 3], r: [f64; 3]) -> [f64; 3] {
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(&m);
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut mk = m;
        for i in 0..3 {
            mk[i][k] = r[i];
        }
        *o = det3(&mk) / d;
    }
    out
}

/// Exact affine map through three correspondences, or `None` if the source
/// points are (nearly) collinear.
fn affine_from_three(src: [Point; 3], dst: [Point; 3]) -> Option<AffineTransform> {
    let area = (src[1].0 - src[0].0) * (src[2].1 - src[0].1)
        - (src[2].0 - src[0].0) * (src[1].1 - src[0].1);
    if area.abs() < MIN_SAMPLE_AREA {
        return None;
    }
    let m = [
        [src[0].0, src[0].1, 1.0],
        [src[1].0, src[1].1, 1.0],
        [src[2].0, src[2].1, 1.0],
    ];
    let row_x = solve3(m, [dst[0].0, dst[1].0, dst[2].0]);
    let row_y = solve3(m, [dst[0].1, dst[1].1, dst[2].1]);
    let t = AffineTransform([row_x[0], row_x[1], row_x[2], row_y[0], row_y[1], row_y[2]]);
    t.is_invertible().then_some(t)
}

/// Least-squares affine fit on the selected pairs, solved per output row on
/// centred coordinates.
pub fn fit_affine_lsq(src: &[Point], dst: &[Point]) -> Result<AffineTransform> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::InvalidParameter(
            "affine least squares needs at least 3 matched pairs".into(),
        ));
    }
    let n = src.len() as f64;
    let mean = |p: &[Point]| {
        let (sx, sy) = p.iter().fold((0.0, 0.0), |a, q| (a.0 + q.0, a.1 + q.1));
        (sx / n, sy / n)
    };
    let (mx, my) = mean(src);
    let (mu, mv) = mean(dst);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let (mut sxu, mut syu, mut sxv, mut syv) = (0.0, 0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (x, y) = (s.0 - mx, s.1 - my);
        let (u, v) = (d.0 - mu, d.1 - mv);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        sxu += x * u;
        syu += y * u;
        sxv += x * v;
        syv += y * v;
    }
    let det = sxx * syy - sxy * sxy;
    if det.abs() <= 1e-12 * (sxx * syy).max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate("matched source points are collinear".into()));
    }
    let a = (sxu * syy - syu * sxy) / det;
    let b = (syu * sxx - sxu * sxy) / det;
    let c = (sxv * syy - syv * sxy) / det;
    let d = (syv * sxx - sxv * sxy) / det;
    let t = AffineTransform([a, b, mu - a * mx - b * my, c, d, mv - c * mx - d * my]);
    if !t.is_invertible() {
        return Err(Error::Degenerate("least-squares affine is singular".into()));
    }
    Ok(t)
}

fn inlier_flags(t: &AffineTransform, src: &[Point], dst: &[Point], tol: f64) -> Vec<bool> {
    src.iter()
        .zip(dst)
        .map(|(s, d)| {
            let (x, y) = t.apply(s.0, s.1);
            (x - d.0).hypot(y - d.1) < tol
        })
        .collect()
}

/// Robust affine estimation from matched point pairs (`src[i] -> dst[i]`).
///
/// Each iteration fits an exact affine map through three distinct random
/// pairs; the hypothesis with the most pairs under `inlier_px` reprojection
/// error wins (first found on ties). The winner is refit by least squares on
/// its consensus set and the returned flags are recomputed under the refit.
pub fn estimate_affine_ransac<R: Rng + ?Sized>(
    src: &[Point],
    dst: &[Point],
    params: &RansacParams,
    rng: &mut R,
) -> Result<(AffineTransform, Vec<bool>)> {
    if src.len() != dst.len() {
        return Err(Error::InvalidParameter(format!(
            "point lists differ in length ({} vs {})",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len();
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "RANSAC needs at least 3 pairs, got {n}"
        )));
    }
    if !(params.inlier_px > 0.0) || params.iterations == 0 {
        return Err(Error::InvalidParameter("invalid RANSAC parameters".into()));
    }

    let mut best: Option<(AffineTransform, usize)> = None;
    for _ in 0..params.iterations {
        let idx = rand::seq::index::sample(rng, n, 3);
        let (i, j, k) = (idx.index(0), idx.index(1), idx.index(2));
        let Some(t) = affine_from_three([src[i], src[j], src[k]], [dst[i], dst[j], dst[k]]) else {
            continue;
        };
        let count = inlier_flags(&t, src, dst, params.inlier_px)
            .iter()
            .filter(|f| **f)
            .count();
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((t, count));
            if count == n {
                break;
            }
        }
    }
    let (hypothesis, _) = best.ok_or_else(|| {
        Error::Degenerate("every RANSAC sample was collinear".into())
    })?;

    let flags = inlier_flags(&hypothesis, src, dst, params.inlier_px);
    let (cs, cd): (Vec<Point>, Vec<Point>) = src
        .iter()
        .zip(dst)
        .zip(&flags)
        .filter(|(_, f)| **f)
        .map(|((s, d), _)| (*s, *d))
        .unzip();
    let refit = fit_affine_lsq(&cs, &cd).unwrap_or(hypothesis);
    let flags = inlier_flags(&refit, src, dst, params.inlier_px);
    Ok((refit, flags))
}

/// Samples `channels`-interleaved data at continuous `(sx, sy)`; `None` when
/// the point lies outside the pixel-centre hull.
#[inline]
fn sample_bilinear(
    data: &[f64],
    w: usize,
    h: usize,
    channels: usize,
    sx: f64,
    sy: f64,
    out: &mut [f64],
) -> bool {
    const EPS: f64 = 1e-9;
    if !(sx >= -EPS && sy >= -EPS && sx <= (w - 1) as f64 + EPS && sy <= (h - 1) as f64 + EPS) {
        return false;
    }
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    for (c, o) in out.iter_mut().enumerate() {
        let at = |x: usize, y: usize| data[(y * w + x) * channels + c];
        let top = lerp(at(x0, y0), at(x1, y0), fx);
        let bottom = lerp(at(x0, y1), at(x1, y1), fx);
        *o = lerp(top, bottom, fy);
    }
    true
}

fn warp_channels(
    data: &[f64],
    w: usize,
    h: usize,
    channels: usize,
    t: &AffineTransform,
    out_w: usize,
    out_h: usize,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidParameter("warp target must be non-empty".into()));
    }
    let inv = t.inverse()?;
    let mut out = vec![0.0; out_w * out_h * channels];
    let mut cover = vec![false; out_w * out_h];
    let mut px = vec![0.0; channels];
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            if sample_bilinear(data, w, h, channels, sx, sy, &mut px) {
                let i = y * out_w + x;
                out[i * channels..(i + 1) * channels].copy_from_slice(&px);
                cover[i] = true;
            }
        }
    }
    Ok((out, cover))
}

/// Warps `img` by `t` (source → destination) into an `out_w x out_h` frame.
/// Destination pixels whose preimage falls outside the source are zero and
/// uncovered.
pub fn warp_affine(
    img: &GrayImage,
    t: &AffineTransform,
    out_w: usize,
    out_h: usize,
) -> Result<(GrayImage, BinaryMask)> {
    let (w, h) = img.dims();
    let (data, cover) = warp_channels(img.data(), w, h, 1, t, out_w, out_h)?;
    Ok((
        GrayImage::from_raw(out_w, out_h, data),
        BinaryMask::from_raw(out_w, out_h, cover),
    ))
}

pub fn warp_affine_rgb(
    img: &RgbImage,
    t: &AffineTransform,
    out_w: usize,
    out_h: usize,
) -> Result<(RgbImage, BinaryMask)> {
    let (w, h) = img.dims();
    let src: Vec<f64> = img.data().iter().map(|v| *v as f64).collect();
    let (data, cover) = warp_channels(&src, w, h, 3, t, out_w, out_h)?;
    let bytes = data.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    Ok((
        RgbImage::new(out_w, out_h, bytes)?,
        BinaryMask::from_raw(out_w, out_h, cover),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationParams {
    pub orb: OrbParams,
    pub min_matches: usize,
    pub min_inliers: usize,
    pub ransac: RansacParams,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            orb: OrbParams::default(),
            min_matches: 10,
            min_inliers: 10,
            ransac: RansacParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Maps generated-image pixels into the original frame.
    pub transform: AffineTransform,
    pub inlier_count: usize,
    pub match_count: usize,
    pub succeeded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub result: RegistrationResult,
    /// Generated luma resampled into the original frame (zeros on failure).
    pub warped: GrayImage,
    pub coverage: BinaryMask,
}

/// Registers `gen` onto `orig`. Failure to find enough matches or inliers is
/// reported through `succeeded = false` with an empty coverage mask.
pub fn register<R: Rng + ?Sized>(
    gen: &RgbImage,
    orig: &RgbImage,
    params: &RegistrationParams,
    rng: &mut R,
) -> Registration {
    let gen_luma = gen.to_luma();
    register_luma(&gen_luma, &orig.to_luma(), params, rng)
}

pub fn register_luma<R: Rng + ?Sized>(
    gen: &GrayImage,
    orig: &GrayImage,
    params: &RegistrationParams,
    rng: &mut R,
) -> Registration {
    let (ow, oh) = orig.dims();
    let failed = |match_count: usize, inlier_count: usize| Registration {
        result: RegistrationResult {
            transform: AffineTransform::IDENTITY,
            inlier_count,
            match_count,
            succeeded: false,
        },
        warped: GrayImage::from_raw(ow, oh, vec![0.0; ow * oh]),
        coverage: BinaryMask::from_raw(ow, oh, vec![false; ow * oh]),
    };

    let (Ok(fg), Ok(fo)) = (detect_orb(gen, &params.orb), detect_orb(orig, &params.orb)) else {
        return failed(0, 0);
    };
    let dg: Vec<Descriptor256> = fg.iter().map(|f| f.descriptor).collect();
    let dor: Vec<Descriptor256> = fo.iter().map(|f| f.descriptor).collect();
    let matches = match_descriptors(&dg, &dor);
    if matches.len() < params.min_matches.max(3) {
        return failed(matches.len(), 0);
    }
    let src: Vec<Point> = matches
        .iter()
        .map(|m| (fg[m.index_a].keypoint.x, fg[m.index_a].keypoint.y))
        .collect();
    let dst: Vec<Point> = matches
        .iter()
        .map(|m| (fo[m.index_b].keypoint.x, fo[m.index_b].keypoint.y))
        .collect();
    let Ok((transform, flags)) = estimate_affine_ransac(&src, &dst, &params.ransac, rng) else {
        return failed(matches.len(), 0);
    };
    let inliers = flags.iter().filter(|f| **f).count();
    if inliers < params.min_inliers {
        return failed(matches.len(), inliers);
    }
    match warp_affine(gen, &transform, ow, oh) {
        Ok((warped, coverage)) => Registration {
            result: RegistrationResult {
                transform,
                inlier_count: inliers,
                match_count: matches.len(),
                succeeded: true,
            },
            warped,
            coverage,
        },
        Err(_) => failed(matches.len(), inliers),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_points() -> Vec<Point> {
        (0..5)
            .flat_map(|i| (0..4).map(move |j| (10.0 * i as f64 + 3.0, 7.0 * j as f64 + 1.0)))
            .collect()
    }

    #[test]
    fn exact_translation() {
        let src = grid_points();
        let dst: Vec<Point> = src.iter().map(|p| (p.0 + 5.0, p.1 - 2.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t, flags) =
            estimate_affine_ransac(&src, &dst, &RansacParams::default(), &mut rng).unwrap();
        let expect = AffineTransform::translation(5.0, -2.0);
        for (a, b) in t.0.iter().zip(expect.0) {
            assert!((a - b).abs() < 1e-9, "{t:?}");
        }
        assert!(flags.iter().all(|f| *f));
    }

    #[test]
    fn collinear_pairs_are_degenerate() {
        let src = vec![(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)];
        let dst = src.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            estimate_affine_ransac(&src, &dst, &RansacParams::default(), &mut rng),
            Err(Error::Degenerate(_))
        ));
        assert!(estimate_affine_ransac(&src[..2], &dst[..2], &RansacParams::default(), &mut rng)
            .is_err());
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = AffineTransform([1.1, 0.2, 3.0, -0.1, 0.9, -4.0]);
        let inv = t.inverse().unwrap();
        let (x, y) = inv.apply(t.apply(7.0, -2.0).0, t.apply(7.0, -2.0).1);
        assert!((x - 7.0).abs() < 1e-12 && (y + 2.0).abs() < 1e-12);
        assert!(AffineTransform([1.0, 2.0, 0.0, 2.0, 4.0, 0.0]).inverse().is_err());
    }

    #[test]
    fn identity_warp_copies() {
        let img = GrayImage::from_fn(9, 7, |x, y| (x * 20 + y) as f64).unwrap();
        let (out, cov) = warp_affine(&img, &AffineTransform::IDENTITY, 9, 7).unwrap();
        assert_eq!(out, img);
        assert_eq!(cov.count_ones(), 63);
    }

    #[test]
    fn translated_out_of_frame_has_no_coverage() {
        let img = GrayImage::filled(8, 6, 10.0).unwrap();
        let (_, cov) = warp_affine(&img, &AffineTransform::translation(8.0, 0.0), 8, 6).unwrap();
        assert_eq!(cov.count_ones(), 0);
    }

    #[test]
    fn singular_warp_fails() {
        let img = GrayImage::filled(4, 4, 0.0).unwrap();
        let t = AffineTransform([0.0; 6]);
        assert!(warp_affine(&img, &t, 4, 4).is_err());
    }

    #[test]
    fn featureless_pair_fails_gracefully() {
        let a = RgbImage::filled(64, 64, [128, 128, 128]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = register(&a, &a, &RegistrationParams::default(), &mut rng);
        assert!(!r.result.succeeded);
        assert_eq!(r.coverage.count_ones(), 0);
    }
}
