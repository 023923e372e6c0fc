use crate::error::{Error, Result};
use crate::raster::DisparityMap;

/// Least-squares scale and shift mapping a prediction onto a target, with
/// the sufficient statistics needed to differentiate through the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub scale: f64,
    pub shift: f64,
    /// Row-major indices of the pixels used in the fit.
    pub(crate) pixels: Vec<usize>,
    pub(crate) pred_mean: f64,
    pub(crate) target_mean: f64,
    pub(crate) pred_var_sum: f64,
}

impl Alignment {
    pub fn apply(&self, v: f64) -> f64 {
        self.scale * v + self.shift
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    /// `(∂scale/∂pred_k, ∂shift/∂pred_k)` for a pixel `k` inside the fit.
    #[inline]
    pub(crate) fn partials(&self, pred_k: f64, target_k: f64) -> (f64, f64) {
        let n = self.pixels.len() as f64;
        let ds = ((target_k - self.target_mean) - 2.0 * self.scale * (pred_k - self.pred_mean))
            / self.pred_var_sum;
        let dt = -self.pred_mean * ds - self.scale / n;
        (ds, dt)
    }
}

/// Closed-form minimiser of `Σ (s·pred + t − gt)²` over pixels valid in both
/// maps (and in `mask`, when given). Solved on centred sums, which is the
/// 2x2 normal system after elimination of `t`.
pub fn align_lsq(
    pred: &DisparityMap,
    gt: &DisparityMap,
    mask: Option<&[bool]>,
) -> Result<Alignment> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            found: pred.dims(),
        });
    }
    if let Some(m) = mask {
        if m.len() != pred.len() {
            return Err(Error::InvalidParameter("alignment mask has wrong length".into()));
        }
    }
    let pixels: Vec<usize> = (0..pred.len())
        .filter(|&i| pred.valid()[i] && gt.valid()[i] && mask.is_none_or(|m| m[i]))
        .collect();
    if pixels.len() < 2 {
        return Err(Error::Degenerate(format!(
            "alignment needs at least 2 jointly valid pixels, got {}",
            pixels.len()
        )));
    }
    let p = pred.values();
    let g = gt.values();
    let n = pixels.len() as f64;
    let pred_mean = pixels.iter().map(|&i| p[i]).sum::<f64>() / n;
    let target_mean = pixels.iter().map(|&i| g[i]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut spp) = (0.0, 0.0, 0.0);
    for &i in &pixels {
        let dp = p[i] - pred_mean;
        sxx += dp * dp;
        sxy += dp * (g[i] - target_mean);
        spp += p[i] * p[i];
    }
    if !(sxx > 1e-12 * spp) {
        return Err(Error::Degenerate(
            "prediction is constant over the valid pixels".into(),
        ));
    }
    let scale = sxy / sxx;
    Ok(Alignment {
        scale,
        shift: target_mean - scale * pred_mean,
        pixels,
        pred_mean,
        target_mean,
        pred_var_sum: sxx,
    })
}
