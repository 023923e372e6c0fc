#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use depthcur::io::{save_depth_pfm, save_rgb};
use depthcur::synth::{noise_rgb, smooth_depth, textured_rgb};
use depthcur::{AffineTransform, BinaryMask, DepthMap, DisparityMap, GrayImage, RgbImage};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_gray<R: Rng>(w: usize, h: usize, rng: &mut R) -> GrayImage {
    GrayImage::new(w, h, (0..w * h).map(|_| rng.random_range(0.0..=255.0)).collect()).unwrap()
}

/// Textured image blurred by one pass of a 3x3 box so neighbouring pixels
/// are correlated (plain noise keeps every SSIM near zero).
pub fn smooth_gray<R: Rng>(w: usize, h: usize, rng: &mut R) -> GrayImage {
    let raw = random_gray(w, h, rng);
    GrayImage::from_fn(w, h, |x, y| {
        let mut s = 0.0;
        let mut n = 0.0;
        for yy in y.saturating_sub(1)..(y + 2).min(h) {
            for xx in x.saturating_sub(1)..(x + 2).min(w) {
                s += raw.get(xx, yy);
                n += 1.0;
            }
        }
        s / n
    })
    .unwrap()
}

/// Direct double loop over every window position, with indices clamped to
/// the image. Returns per-pixel values and coverage.
pub fn brute_ssim(a: &GrayImage, b: &GrayImage, coverage: Option<&BinaryMask>) -> (Vec<f64>, Vec<bool>) {
    const RADIUS: i64 = 5;
    const SIGMA: f64 = 1.5;
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let raw: Vec<f64> = (-RADIUS..=RADIUS)
        .map(|k| (-((k * k) as f64) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let norm: f64 = raw.iter().sum();
    let g: Vec<f64> = raw.iter().map(|v| v / norm).collect();

    let (w, h) = a.dims();
    let mut values = vec![0.0; w * h];
    let mut cover = vec![true; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            let mut covered = true;
            for dy in -RADIUS..=RADIUS {
                for dx in -RADIUS..=RADIUS {
                    let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    if let Some(m) = coverage {
                        covered &= m.get(sx, sy);
                    }
                    let wt = g[(dy + RADIUS) as usize] * g[(dx + RADIUS) as usize];
                    let (pa, pb) = (a.get(sx, sy), b.get(sx, sy));
                    ma += wt * pa;
                    mb += wt * pb;
                    saa += wt * pa * pa;
                    sbb += wt * pb * pb;
                    sab += wt * pa * pb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            cover[y * w + x] = covered;
            values[y * w + x] = if covered { s } else { 0.0 };
        }
    }
    (values, cover)
}

/// Random well-conditioned affine map: rotation up to ±0.3 rad, anisotropic
/// scale in [0.8, 1.25], small shear and a translation up to ±20 px.
pub fn random_affine<R: Rng>(rng: &mut R) -> AffineTransform {
    let th: f64 = rng.random_range(-0.3..0.3);
    let sx: f64 = rng.random_range(0.8..1.25);
    let sy: f64 = rng.random_range(0.8..1.25);
    let sh: f64 = rng.random_range(-0.1..0.1);
    let (c, s) = (th.cos(), th.sin());
    AffineTransform([
        c * sx,
        -s * sy + sh,
        rng.random_range(-20.0..20.0),
        s * sx,
        c * sy,
        rng.random_range(-20.0..20.0),
    ])
}

pub struct Correspondences {
    pub truth: AffineTransform,
    pub src: Vec<(f64, f64)>,
    pub dst: Vec<(f64, f64)>,
    pub inlier: Vec<bool>,
}

/// `n` pairs of which `inlier_fraction` follow `truth` up to `noise_px`
/// jitter; the rest point somewhere random in a 200x200 frame.
pub fn correspondences(seed: u64, n: usize, inlier_fraction: f64, noise_px: f64) -> Correspondences {
    let mut r = rng(seed);
    let truth = random_affine(&mut r);
    let n_in = (n as f64 * inlier_fraction).round() as usize;
    let mut src = Vec::with_capacity(n);
    let mut dst = Vec::with_capacity(n);
    let mut inlier = Vec::with_capacity(n);
    for i in 0..n {
        let p = (r.random_range(0.0..200.0), r.random_range(0.0..200.0));
        src.push(p);
        if i < n_in {
            let (x, y) = truth.apply(p.0, p.1);
            dst.push((
                x + r.random_range(-noise_px..=noise_px),
                y + r.random_range(-noise_px..=noise_px),
            ));
            inlier.push(true);
        } else {
            dst.push((r.random_range(-50.0..250.0), r.random_range(-50.0..250.0)));
            inlier.push(false);
        }
    }
    Correspondences {
        truth,
        src,
        dst,
        inlier,
    }
}

fn sse(p: &[f64], g: &[f64], s: f64, t: f64) -> f64 {
    p.iter().zip(g).map(|(p, g)| (s * p + t - g).powi(2)).sum()
}

/// Minimises `Σ(s·p + t − g)²` by repeated grid refinement around the best
/// cell. Returns `(s, t, sse)`.
pub fn grid_align(p: &[f64], g: &[f64]) -> (f64, f64, f64) {
    let (mut cs, mut ct) = (0.0, 0.0);
    let (mut span_s, mut span_t) = (50.0, 50.0);
    let steps = 40;
    let mut best = (cs, ct, sse(p, g, cs, ct));
    for _ in 0..60 {
        for i in -steps..=steps {
            for j in -steps..=steps {
                let s = cs + span_s * i as f64 / steps as f64;
                let t = ct + span_t * j as f64 / steps as f64;
                let e = sse(p, g, s, t);
                if e < best.2 {
                    best = (s, t, e);
                }
            }
        }
        cs = best.0;
        ct = best.1;
        span_s *= 0.25;
        span_t *= 0.25;
    }
    best
}

pub struct OracleMetrics {
    pub absrel: f64,
    pub delta1: f64,
    pub rmse: f64,
}

/// Straight-line evaluation: grid-searched alignment in disparity space,
/// floor, invert, then the three metrics over jointly valid pixels.
pub fn eval_oracle(pred: &DisparityMap, gt: &DepthMap, floor: f64, threshold: f64) -> OracleMetrics {
    let idx: Vec<usize> = (0..gt.len())
        .filter(|&i| pred.valid()[i] && gt.valid()[i])
        .collect();
    let p: Vec<f64> = idx.iter().map(|&i| pred.values()[i]).collect();
    let g: Vec<f64> = idx.iter().map(|&i| 1.0 / gt.values()[i]).collect();
    let (s, t, _) = grid_align(&p, &g);
    let (mut absrel, mut d1, mut se) = (0.0, 0.0, 0.0);
    for (k, &i) in idx.iter().enumerate() {
        let d = 1.0 / (s * p[k] + t).max(floor);
        let gd = gt.values()[i];
        absrel += (d - gd).abs() / gd;
        if (d / gd).max(gd / d) < threshold {
            d1 += 1.0;
        }
        se += (d - gd).powi(2);
    }
    let n = idx.len() as f64;
    OracleMetrics {
        absrel: absrel / n,
        delta1: d1 / n,
        rmse: (se / n).sqrt(),
    }
}

/// Kinds of entries in the pipeline fixtures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntryKind {
    /// Generated image identical to the original.
    SelfPair,
    /// Generated image is independent noise.
    Noise,
    /// Generated image points at a file that does not exist.
    Missing,
}

/// Writes images, depth and a JSONL manifest for the given entries into
/// `dir`, returning the manifest path.
pub fn write_fixture(dir: &Path, w: usize, h: usize, kinds: &[EntryKind]) -> std::path::PathBuf {
    let mut lines = Vec::new();
    for (k, kind) in kinds.iter().enumerate() {
        let id = format!("entry{k:03}");
        let orig: RgbImage = textured_rgb(w, h, 100 + k as u64);
        save_rgb(&orig, &dir.join(format!("{id}_orig.png"))).unwrap();
        save_depth_pfm(&smooth_depth(w, h, k as u64), &dir.join(format!("{id}_depth.pfm"))).unwrap();
        let gen_name = format!("{id}_gen.png");
        match kind {
            EntryKind::SelfPair => save_rgb(&orig, &dir.join(&gen_name)).unwrap(),
            EntryKind::Noise => save_rgb(&noise_rgb(w, h, 900 + k as u64), &dir.join(&gen_name)).unwrap(),
            EntryKind::Missing => {}
        }
        lines.push(
            json!({
                "id": id,
                "depth_source": format!("{id}_depth.pfm"),
                "rgb_orig": format!("{id}_orig.png"),
                "rgb_gen": [gen_name],
                "depth_pseudo": format!("{id}_pseudo.pfm"),
                "seed_tag": k,
            })
            .to_string(),
        );
    }
    let manifest = dir.join("manifest.jsonl");
    std::fs::write(&manifest, lines.join("\n") + "\n").unwrap();
    manifest
}

/// Every file under `dir` (recursively) with its bytes, sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
