use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::embed::Embedding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpLayer {
    /// Row-major `d_out x d_in`.
    #[serde(rename = "W")]
    pub weights: Vec<f64>,
    #[serde(rename = "b")]
    pub bias: Vec<f64>,
}

/// Fully connected scorer: ReLU hidden layers, linear scalar output.
///
/// Stored as JSON: `{"dims": [d0, ..., 1], "layers": [{"W": [...], "b": [...]}, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMlp")]
pub struct MlpWeights {
    dims: Vec<usize>,
    layers: Vec<MlpLayer>,
}

#[derive(Deserialize)]
struct RawMlp {
    dims: Vec<usize>,
    layers: Vec<MlpLayer>,
}

impl TryFrom<RawMlp> for MlpWeights {
    type Error = Error;

    fn try_from(raw: RawMlp) -> Result<Self> {
        MlpWeights::new(raw.dims, raw.layers)
    }
}

impl MlpWeights {
    pub fn new(dims: Vec<usize>, layers: Vec<MlpLayer>) -> Result<Self> {
        let bad = |m: String| Err(Error::format("MLP weights", m));
        if dims.len() < 2 {
            return bad("dims needs at least an input and an output size".into());
        }
        if dims.last() != Some(&1) {
            return bad(format!("final output dim must be 1, got {:?}", dims.last()));
        }
        if dims.contains(&0) {
            return bad("layer dims must be positive".into());
        }
        if layers.len() != dims.len() - 1 {
            return bad(format!(
                "{} layers given for {} dims",
                layers.len(),
                dims.len()
            ));
        }
        for (k, l) in layers.iter().enumerate() {
            let (din, dout) = (dims[k], dims[k + 1]);
            if l.weights.len() != din * dout {
                return bad(format!(
                    "layer {k}: W has {} entries, expected {}",
                    l.weights.len(),
                    din * dout
                ));
            }
            if l.bias.len() != dout {
                return bad(format!(
                    "layer {k}: b has {} entries, expected {dout}",
                    l.bias.len()
                ));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return bad(format!("layer {k} holds a non-finite weight"));
            }
        }
        Ok(MlpWeights { dims, layers })
    }

    /// Seeded uniform initialisation scaled by `1/sqrt(d_in)`.
    pub fn random(dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|d| {
                let a = 1.0 / (d[0] as f64).sqrt();
                MlpLayer {
                    weights: (0..d[0] * d[1]).map(|_| rng.random_range(-a..a)).collect(),
                    bias: (0..d[1]).map(|_| rng.random_range(-0.1..0.1)).collect(),
                }
            })
            .collect();
        MlpWeights::new(dims.to_vec(), layers)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("weights serialise")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn layers(&self) -> &[MlpLayer] {
        &self.layers
    }

    /// Forward pass returning the scalar output and every layer's
    /// pre-activation.
    pub(crate) fn forward(&self, input: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let mut act = input.to_vec();
        let mut pre = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.iter().enumerate() {
            let (din, dout) = (self.dims[k], self.dims[k + 1]);
            let z: Vec<f64> = (0..dout)
                .map(|o| {
                    l.bias[o]
                        + l.weights[o * din..(o + 1) * din]
                            .iter()
                            .zip(&act)
                            .map(|(w, a)| w * a)
                            .sum::<f64>()
                })
                .collect();
            let last = k + 1 == self.layers.len();
            act = if last {
                z.clone()
            } else {
                z.iter().map(|v| v.max(0.0)).collect()
            };
            pre.push(z);
        }
        (act[0], pre)
    }

    /// Gradient of the scalar output with respect to the network input.
    fn backward(&self, pre: &[Vec<f64>]) -> Vec<f64> {
        let mut g = vec![1.0];
        for k in (0..self.layers.len()).rev() {
            let (din, dout) = (self.dims[k], self.dims[k + 1]);
            let l = &self.layers[k];
            let mut gin = vec![0.0; din];
            for o in 0..dout {
                if g[o] == 0.0 {
                    continue;
                }
                for (gi, w) in gin.iter_mut().zip(&l.weights[o * din..(o + 1) * din]) {
                    *gi += g[o] * w;
                }
            }
            if k > 0 {
                // ReLU of the layer below; derivative taken as 0 at the kink.
                for (gi, z) in gin.iter_mut().zip(&pre[k - 1]) {
                    if *z <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            g = gin;
        }
        g
    }

    /// Smallest `|pre-activation|` over hidden units, for callers that need
    /// to stay away from ReLU kinks.
    pub fn min_hidden_margin(&self, e: &Embedding) -> Option<f64> {
        let (h, _) = normalize(&e.0)?;
        let (_, pre) = self.forward(&h);
        pre[..pre.len() - 1]
            .iter()
            .flatten()
            .map(|v| v.abs())
            .min_by(f64::total_cmp)
    }
}

/// Unit-length direction of `e` and its Euclidean norm.
///
/// Dividing by the largest magnitude first makes the result depend only on
/// the direction whenever a rescaled input is exactly representable: the
/// division by that maximum is correctly rounded and the real quotient is
/// unchanged.
fn normalize(e: &[f64]) -> Option<(Vec<f64>, f64)> {
    let m = e.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(m > 0.0 && m.is_finite()) {
        return None;
    }
    let q: Vec<f64> = e.iter().map(|v| v / m).collect();
    let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    Some((q.iter().map(|v| v / nq).collect(), m * nq))
}

/// Aesthetic score of the L2-normalised embedding and its gradient with
/// respect to the raw embedding.
pub fn aesthetic_score(e: &Embedding, w: &MlpWeights) -> Result<(f64, Vec<f64>)> {
    if e.len() != w.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: (w.input_dim(), 1),
            found: (e.len(), 1),
        });
    }
    if e.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("embedding holds a non-finite value".into()));
    }
    let (h, norm) = normalize(&e.0).ok_or(Error::Degenerate("zero embedding".into()))?;
    let (score, pre) = w.forward(&h);
    let gh = w.backward(&pre);
    // (I/‖e‖ − e eᵀ/‖e‖³) gh = (gh − (gh·h) h) / ‖e‖
    let proj: f64 = gh.iter().zip(&h).map(|(a, b)| a * b).sum();
    let grad = gh
        .iter()
        .zip(&h)
        .map(|(g, hv)| (g - proj * hv) / norm)
        .collect();
    Ok((score, grad))
}
