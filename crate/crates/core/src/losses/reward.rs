use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{DepthMap, RgbImage};

use super::cosine::cosine_depth_loss;
use super::embed::{ImageEmbedder, ToyEmbedder};
use super::mlp::{aesthetic_score, MlpWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda_depth: f64,
    pub lambda_aesthetic: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lambda_depth: 0.9,
            lambda_aesthetic: 0.1,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_depth >= 0.0 && self.lambda_aesthetic >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter("reward weights must be non-negative".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardBreakdown {
    /// `λ_depth · depth_loss − λ_aesthetic · aesthetic_score`.
    pub value: f64,
    pub depth_loss: f64,
    pub aesthetic_score: f64,
    /// ∂value/∂d_gen, row-major.
    pub grad_depth: Vec<f64>,
    /// ∂value/∂embedding.
    pub grad_embedding: Vec<f64>,
}

/// Generator objective with the bundled [`ToyEmbedder`].
pub fn rl_total_loss(
    d_gen: &DepthMap,
    d_src: &DepthMap,
    img: &RgbImage,
    mlp: &MlpWeights,
    weights: &RewardWeights,
) -> Result<RewardBreakdown> {
    rl_total_loss_with(&ToyEmbedder, d_gen, d_src, img, mlp, weights)
}

pub fn rl_total_loss_with<E: ImageEmbedder + ?Sized>(
    embedder: &E,
    d_gen: &DepthMap,
    d_src: &DepthMap,
    img: &RgbImage,
    mlp: &MlpWeights,
    weights: &RewardWeights,
) -> Result<RewardBreakdown> {
    weights.validate()?;
    let depth = cosine_depth_loss(d_gen, d_src)?;
    let (score, grad_score) = aesthetic_score(&embedder.embed(img), mlp)?;
    Ok(RewardBreakdown {
        value: weights.lambda_depth * depth.value - weights.lambda_aesthetic * score,
        depth_loss: depth.value,
        aesthetic_score: score,
        grad_depth: depth.grad.iter().map(|g| weights.lambda_depth * g).collect(),
        grad_embedding: grad_score
            .iter()
            .map(|g| -weights.lambda_aesthetic * g)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::toy_embed;
    use crate::synth::{noise_rgb, smooth_depth};

    #[test]
    fn depth_term_vanishes_on_identical_depth() {
        let d = smooth_depth(8, 8, 1);
        let img = noise_rgb(8, 8, 2);
        let mlp = MlpWeights::random(&[64, 8, 1], 3).unwrap();
        let r = rl_total_loss(&d, &d, &img, &mlp, &RewardWeights::default()).unwrap();
        let (score, _) = aesthetic_score(&toy_embed(&img), &mlp).unwrap();
        assert!((r.value + 0.1 * score).abs() < 1e-15);
    }

    #[test]
    fn aesthetic_weight_zero() {
        let a = smooth_depth(8, 8, 1);
        let b = smooth_depth(8, 8, 5);
        let img = noise_rgb(8, 8, 2);
        let mlp = MlpWeights::random(&[64, 8, 1], 3).unwrap();
        let rw = RewardWeights {
            lambda_depth: 0.9,
            lambda_aesthetic: 0.0,
        };
        let r = rl_total_loss(&a, &b, &img, &mlp, &rw).unwrap();
        assert_eq!(r.value, 0.9 * cosine_depth_loss(&a, &b).unwrap().value);
        assert!(RewardWeights {
            lambda_depth: -1.0,
            lambda_aesthetic: 0.1
        }
        .validate()
        .is_err());
    }
}
