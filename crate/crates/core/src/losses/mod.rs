//! Training losses and reward terms. Every gradient-bearing operation
//! returns its analytic gradient alongside the value.

mod align;
mod cosine;
mod embed;
mod gm;
pub mod gradcheck;
mod mlp;
mod reward;
mod ssi;

use serde::{Deserialize, Serialize};

pub use align::{align_lsq, Alignment};
pub use cosine::cosine_depth_loss;
pub use embed::{toy_embed, Embedding, ImageEmbedder, ToyEmbedder, EMBEDDING_DIM};
pub use gm::{loss_gm, DEFAULT_GM_SCALES};
pub use mlp::{aesthetic_score, MlpLayer, MlpWeights};
pub use reward::{rl_total_loss, rl_total_loss_with, RewardBreakdown, RewardWeights};
pub use ssi::{loss_ssi, loss_ssi_with_trim_set, trim_count, DEFAULT_TRIM};

use crate::error::Result;
use crate::raster::DisparityMap;

/// Scalar loss with its gradient over the prediction grid (row-major, zero
/// at invalid or excluded pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

/// Relative weights of the scale-and-shift-invariant and gradient-matching
/// terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthLossWeights {
    pub ssi: f64,
    pub gm: f64,
    pub trim: f64,
    pub gm_scales: usize,
}

impl Default for DepthLossWeights {
    fn default() -> Self {
        DepthLossWeights {
            ssi: 1.0,
            gm: 4.0,
            trim: DEFAULT_TRIM,
            gm_scales: DEFAULT_GM_SCALES,
        }
    }
}

/// `ssi + 4 gm` with the default weights; gradients combine with the same
/// weights.
pub fn loss_depth_total(pred: &DisparityMap, gt: &DisparityMap) -> Result<LossResult> {
    loss_depth_total_with(pred, gt, &DepthLossWeights::default())
}

pub fn loss_depth_total_with(
    pred: &DisparityMap,
    gt: &DisparityMap,
    weights: &DepthLossWeights,
) -> Result<LossResult> {
    let ssi = loss_ssi(pred, gt, weights.trim)?;
    let gm = loss_gm(pred, gt, weights.gm_scales)?;
    Ok(LossResult {
        value: weights.ssi * ssi.value + weights.gm * gm.value,
        grad: ssi
            .grad
            .iter()
            .zip(&gm.grad)
            .map(|(a, b)| weights.ssi * a + weights.gm * b)
            .collect(),
        width: ssi.width,
        height: ssi.height,
    })
}
