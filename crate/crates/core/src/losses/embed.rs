use std::f64::consts::TAU;

use crate::raster::RgbImage;

pub const EMBEDDING_DIM: usize = 64;

/// Image feature vector fed to the aesthetic scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Maps an image to an embedding. A real encoder can be plugged in behind
/// this trait; [`ToyEmbedder`] is the bundled deterministic one.
pub trait ImageEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, img: &RgbImage) -> Embedding;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ToyEmbedder;

impl ImageEmbedder for ToyEmbedder {
    fn dim(&self) -> usize {
        EMBEDDING_DIM
    }

    fn embed(&self, img: &RgbImage) -> Embedding {
        toy_embed(img)
    }
}

fn bin16(v: f64) -> usize {
    ((v / 16.0) as usize).min(15)
}

/// Hand-crafted 64-feature image descriptor:
///
/// * `[0, 48)`: 16-bin normalised histograms of R, G and B;
/// * `[48, 56)`: 8-bin gradient-orientation histogram of luma, weighted by
///   gradient magnitude and normalised (all zero on flat images);
/// * `[56, 64)`: luma mean, standard deviation, mean `|∂x|`, mean `|∂y|`,
///   min, max, median and the Shannon entropy (bits) of its 16-bin histogram.
///
/// Gradients are forward differences.
pub fn toy_embed(img: &RgbImage) -> Embedding {
    let (w, h) = img.dims();
    let n = (w * h) as f64;
    let mut out = vec![0.0; EMBEDDING_DIM];

    for p in img.data().chunks_exact(3) {
        for c in 0..3 {
            out[c * 16 + (p[c] / 16) as usize] += 1.0;
        }
    }
    for v in &mut out[..48] {
        *v /= n;
    }

    let luma = img.to_luma();
    let l = luma.data();
    let (mut sum_dx, mut n_dx, mut sum_dy, mut n_dy) = (0.0, 0usize, 0.0, 0usize);
    let mut orient = [0.0f64; 8];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let gx = if x + 1 < w { l[i + 1] - l[i] } else { 0.0 };
            let gy = if y + 1 < h { l[i + w] - l[i] } else { 0.0 };
            if x + 1 < w {
                sum_dx += gx.abs();
                n_dx += 1;
            }
            if y + 1 < h {
                sum_dy += gy.abs();
                n_dy += 1;
            }
            let mag = gx.hypot(gy);
            if mag > 0.0 {
                let mut a = gy.atan2(gx);
                if a < 0.0 {
                    a += TAU;
                }
                let b = ((a / TAU * 8.0) as usize).min(7);
                orient[b] += mag;
            }
        }
    }
    let total: f64 = orient.iter().sum();
    if total > 0.0 {
        for (o, v) in out[48..56].iter_mut().zip(orient) {
            *o = v / total;
        }
    }

    let mean = l.iter().sum::<f64>() / n;
    let var = l.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = l.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    let mut hist = [0.0f64; 16];
    for v in l {
        hist[bin16(*v)] += 1.0;
    }
    let entropy = hist
        .iter()
        .filter(|c| **c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.log2()
        })
        .sum::<f64>();

    out[56] = mean;
    out[57] = var.sqrt();
    out[58] = if n_dx > 0 { sum_dx / n_dx as f64 } else { 0.0 };
    out[59] = if n_dy > 0 { sum_dy / n_dy as f64 } else { 0.0 };
    out[60] = sorted[0];
    out[61] = sorted[m - 1];
    out[62] = median;
    out[63] = entropy.max(0.0);
    Embedding(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::noise_rgb;

    #[test]
    fn constant_black() {
        let e = toy_embed(&RgbImage::filled(5, 4, [0, 0, 0]).unwrap());
        assert_eq!(e.len(), 64);
        for c in 0..3 {
            assert_eq!(e.0[c * 16], 1.0);
            assert!(e.0[c * 16 + 1..c * 16 + 16].iter().all(|v| *v == 0.0));
        }
        assert!(e.0[48..56].iter().all(|v| *v == 0.0));
        assert_eq!(e.0[56], 0.0);
        assert_eq!(e.0[57], 0.0);
        assert_eq!(e.0[63], 0.0);
    }

    #[test]
    fn constant_white() {
        let e = toy_embed(&RgbImage::filled(3, 3, [255, 255, 255]).unwrap());
        for c in 0..3 {
            assert_eq!(e.0[c * 16 + 15], 1.0);
        }
        assert_eq!(e.0[56], 255.0);
        assert_eq!(e.0[61], 255.0);
        assert_eq!(e.0[62], 255.0);
    }

    #[test]
    fn noise_is_bit_stable() {
        let img = noise_rgb(32, 24, 9);
        let a = toy_embed(&img);
        let b = toy_embed(&img);
        assert_eq!(
            a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let hist_sum: f64 = a.0[..16].iter().sum();
        assert!((hist_sum - 1.0).abs() < 1e-12);
        assert!((a.0[48..56].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.0[63] > 3.0 && a.0[63] <= 4.0);
    }

    #[test]
    fn horizontal_ramp_orientation() {
        let img = RgbImage::from_fn(8, 8, |x, _| [(x * 30) as u8; 3]).unwrap();
        let e = toy_embed(&img);
        assert_eq!(e.0[48], 1.0);
        assert!(e.0[58] > 0.0);
        assert_eq!(e.0[59], 0.0);
    }
}
