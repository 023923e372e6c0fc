use crate::error::{Error, Result};
use crate::raster::DisparityMap;

use super::align::{align_lsq, Alignment};
use super::LossResult;

pub const DEFAULT_GM_SCALES: usize = 4;

struct Level {
    w: usize,
    h: usize,
    r: Vec<f64>,
    valid: Vec<bool>,
}

/// 2x average pooling; a coarse pixel is valid only if all four children are.
fn pool(l: &Level) -> Option<Level> {
    let (w, h) = (l.w / 2, l.h / 2);
    if w == 0 || h == 0 {
        return None;
    }
    let mut r = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let kids = [
                (2 * y) * l.w + 2 * x,
                (2 * y) * l.w + 2 * x + 1,
                (2 * y + 1) * l.w + 2 * x,
                (2 * y + 1) * l.w + 2 * x + 1,
            ];
            if kids.iter().all(|&c| l.valid[c]) {
                valid[y * w + x] = true;
                r[y * w + x] = kids.iter().map(|&c| l.r[c]).sum::<f64>() / 4.0;
            }
        }
    }
    Some(Level { w, h, r, valid })
}

/// Mean absolute forward difference over valid pairs, and its gradient with
/// respect to the level's residual (sign subgradient 0 at zero).
fn level_term(l: &Level) -> (f64, Vec<f64>) {
    let mut sum = 0.0;
    let mut pairs = Vec::new();
    for y in 0..l.h {
        for x in 0..l.w {
            let i = y * l.w + x;
            if !l.valid[i] {
                continue;
            }
            if x + 1 < l.w && l.valid[i + 1] {
                pairs.push((i, i + 1));
            }
            if y + 1 < l.h && l.valid[i + l.w] {
                pairs.push((i, i + l.w));
            }
        }
    }
    let mut grad = vec![0.0; l.r.len()];
    if pairs.is_empty() {
        return (0.0, grad);
    }
    let inv = 1.0 / pairs.len() as f64;
    for &(a, b) in &pairs {
        let d = l.r[b] - l.r[a];
        sum += d.abs();
        let s = if d > 0.0 {
            inv
        } else if d < 0.0 {
            -inv
        } else {
            0.0
        };
        grad[b] += s;
        grad[a] -= s;
    }
    (sum * inv, grad)
}

fn residual_pyramid(
    pred: &DisparityMap,
    gt: &DisparityMap,
    scales: usize,
) -> Result<(Alignment, Vec<Level>)> {
    let fit = align_lsq(pred, gt, None)?;
    let p = pred.values();
    let g = gt.values();
    let (w, h) = pred.dims();
    let mut base = Level {
        w,
        h,
        r: vec![0.0; w * h],
        valid: vec![false; w * h],
    };
    for &i in fit.pixels() {
        base.r[i] = fit.apply(p[i]) - g[i];
        base.valid[i] = true;
    }
    let mut levels = vec![base];
    while levels.len() < scales {
        match pool(levels.last().expect("non-empty")) {
            Some(l) => levels.push(l),
            None => break,
        }
    }
    Ok((fit, levels))
}

/// Smallest `|forward difference|` of the residual over every scale; the
/// loss is differentiable wherever this is non-zero.
pub(crate) fn min_abs_difference(
    pred: &DisparityMap,
    gt: &DisparityMap,
    scales: usize,
) -> Result<f64> {
    let (_, levels) = residual_pyramid(pred, gt, scales)?;
    let mut m = f64::INFINITY;
    for l in &levels {
        for y in 0..l.h {
            for x in 0..l.w {
                let i = y * l.w + x;
                if !l.valid[i] {
                    continue;
                }
                if x + 1 < l.w && l.valid[i + 1] {
                    m = m.min((l.r[i + 1] - l.r[i]).abs());
                }
                if y + 1 < l.h && l.valid[i + l.w] {
                    m = m.min((l.r[i + l.w] - l.r[i]).abs());
                }
            }
        }
    }
    Ok(m)
}

/// Multi-scale gradient-matching loss on the aligned disparity residual.
///
/// `R = s·pred + t − gt` with `(s, t)` from the least-squares alignment;
/// each coarser scale is a 2x average pool of the previous one. The value is
/// the average over `scales` of the mean `|∂x R| + |∂y R|` across valid
/// forward-difference pairs. Scales too small to hold a pixel contribute 0.
pub fn loss_gm(pred: &DisparityMap, gt: &DisparityMap, scales: usize) -> Result<LossResult> {
    if scales == 0 {
        return Err(Error::InvalidParameter("gradient matching needs at least one scale".into()));
    }
    let (fit, levels) = residual_pyramid(pred, gt, scales)?;
    let p = pred.values();
    let g = gt.values();
    let (w, h) = pred.dims();

    let inv_scales = 1.0 / scales as f64;
    let mut value = 0.0;
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(levels.len());
    for l in &levels {
        let (v, gr) = level_term(l);
        value += v * inv_scales;
        grads.push(gr.into_iter().map(|x| x * inv_scales).collect());
    }
    // Push coarse gradients down through the pooling.
    for k in (1..levels.len()).rev() {
        let (coarse, fine) = (&levels[k], &levels[k - 1]);
        let upper = std::mem::take(&mut grads[k]);
        let lower = &mut grads[k - 1];
        for y in 0..coarse.h {
            for x in 0..coarse.w {
                let gv = upper[y * coarse.w + x];
                if !coarse.valid[y * coarse.w + x] || gv == 0.0 {
                    continue;
                }
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    lower[(2 * y + dy) * fine.w + 2 * x + dx] += gv / 4.0;
                }
            }
        }
    }
    let g_r = &grads[0];

    // Chain through R_i = s p_i + t − g_i, including the fit's dependence on p.
    let (mut sum_gp, mut sum_g) = (0.0, 0.0);
    for &i in fit.pixels() {
        sum_gp += g_r[i] * p[i];
        sum_g += g_r[i];
    }
    let mut grad = vec![0.0; w * h];
    for &i in fit.pixels() {
        let (ds, dt) = fit.partials(p[i], g[i]);
        grad[i] = fit.scale * g_r[i] + sum_gp * ds + sum_g * dt;
    }
    Ok(LossResult {
        value,
        grad,
        width: w,
        height: h,
    })
}
