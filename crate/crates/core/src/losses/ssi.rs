use crate::error::{Error, Result};
use crate::raster::DisparityMap;

use super::align::align_lsq;
use super::LossResult;

/// Fraction of highest-residual pixels excluded from the loss.
pub const DEFAULT_TRIM: f64 = 0.10;

/// Number of pixels dropped out of `n` at trim fraction `trim`, i.e.
/// `ceil(trim · n)` with products that are integral up to rounding noise
/// treated as integral.
pub fn trim_count(n: usize, trim: f64) -> usize {
    let x = trim * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Scale-and-shift-invariant loss on disparity.
///
/// The prediction is aligned to `gt` by least squares over all jointly valid
/// pixels, the `ceil(trim · N)` largest squared residuals are dropped (ties
/// by ascending pixel index), and the value is the mean squared residual
/// over what remains. The gradient differentiates through the alignment and
/// is zero at dropped and invalid pixels.
pub fn loss_ssi(pred: &DisparityMap, gt: &DisparityMap, trim: f64) -> Result<LossResult> {
    loss_ssi_with_trim_set(pred, gt, trim).map(|(r, _)| r)
}

/// As [`loss_ssi`], also returning the dropped pixel indices in drop order.
pub fn loss_ssi_with_trim_set(
    pred: &DisparityMap,
    gt: &DisparityMap,
    trim: f64,
) -> Result<(LossResult, Vec<usize>)> {
    if !(0.0..1.0).contains(&trim) {
        return Err(Error::InvalidParameter(format!(
            "trim fraction must lie in [0, 1), got {trim}"
        )));
    }
    let fit = align_lsq(pred, gt, None)?;
    let p = pred.values();
    let g = gt.values();
    let pixels = fit.pixels();
    let n = pixels.len();

    let residual: Vec<f64> = pixels.iter().map(|&i| fit.apply(p[i]) - g[i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (residual[b] * residual[b])
            .total_cmp(&(residual[a] * residual[a]))
            .then(pixels[a].cmp(&pixels[b]))
    });
    let dropped_count = trim_count(n, trim).min(n - 1);
    let mut kept = vec![true; n];
    for &j in &order[..dropped_count] {
        kept[j] = false;
    }
    let k = (n - dropped_count) as f64;

    let mut value = 0.0;
    // Σ r_i p_i and Σ r_i over kept pixels.
    let (mut a, mut b) = (0.0, 0.0);
    for j in 0..n {
        if kept[j] {
            let r = residual[j];
            value += r * r;
            a += r * p[pixels[j]];
            b += r;
        }
    }
    value /= k;

    let mut grad = vec![0.0; pred.len()];
    for j in 0..n {
        if !kept[j] {
            continue;
        }
        let i = pixels[j];
        let (ds, dt) = fit.partials(p[i], g[i]);
        grad[i] = 2.0 / k * (fit.scale * residual[j] + a * ds + b * dt);
    }

    let dropped = order[..dropped_count].iter().map(|&j| pixels[j]).collect();
    Ok((
        LossResult {
            value,
            grad,
            width: pred.width(),
            height: pred.height(),
        },
        dropped,
    ))
}
