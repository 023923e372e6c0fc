//! Central-difference verification of analytic gradients, plus seeded probe
//! generators for each gradient-bearing loss.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{DepthMap, DisparityMap};

use super::align::align_lsq;
use super::cosine::cosine_depth_loss;
use super::embed::Embedding;
use super::gm::{loss_gm, min_abs_difference, DEFAULT_GM_SCALES};
use super::mlp::{aesthetic_score, MlpWeights};
use super::ssi::{loss_ssi_with_trim_set, trim_count, DEFAULT_TRIM};

pub const DEFAULT_STEP: f64 = 1e-4;

/// Largest `|analytic − numeric| / max(|numeric|, 1e-8)` over the checked
/// coordinates, where `numeric` is the central difference with the given
/// step. `coords` restricts the check to a subset of coordinates.
pub fn gradcheck<F>(mut f: F, x: &[f64], step: f64, coords: Option<&[bool]>) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    let (_, analytic) = f(x)?;
    if analytic.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: (x.len(), 1),
            found: (analytic.len(), 1),
        });
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        if coords.is_some_and(|c| !c[k]) {
            continue;
        }
        probe[k] = x[k] + step;
        let (fp, _) = f(&probe)?;
        probe[k] = x[k] - step;
        let (fm, _) = f(&probe)?;
        probe[k] = x[k];
        let numeric = (fp - fm) / (2.0 * step);
        let err = (analytic[k] - numeric).abs() / numeric.abs().max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Gradient-bearing operations with bundled probe generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeOp {
    Ssi,
    Gm,
    Cosine,
    Aesthetic,
}

impl ProbeOp {
    pub const ALL: [ProbeOp; 4] = [ProbeOp::Ssi, ProbeOp::Gm, ProbeOp::Cosine, ProbeOp::Aesthetic];

    pub fn name(self) -> &'static str {
        match self {
            ProbeOp::Ssi => "ssi",
            ProbeOp::Gm => "gm",
            ProbeOp::Cosine => "cosine",
            ProbeOp::Aesthetic => "aesthetic",
        }
    }

    /// Maximum accepted relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            ProbeOp::Ssi | ProbeOp::Gm => 1e-4,
            ProbeOp::Cosine | ProbeOp::Aesthetic => 1e-5,
        }
    }
}

impl fmt::Display for ProbeOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProbeOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProbeOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown gradient op '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub op: ProbeOp,
    pub probes: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

/// Runs `probes` seeded smooth probe points for `op`.
pub fn run_probes(op: ProbeOp, probes: usize, seed: u64) -> Result<ProbeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (op as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut max_error = 0.0f64;
    for _ in 0..probes {
        let e = match op {
            ProbeOp::Ssi => check_ssi(&mut rng)?,
            ProbeOp::Gm => check_gm(&mut rng)?,
            ProbeOp::Cosine => check_cosine(&mut rng)?,
            ProbeOp::Aesthetic => check_aesthetic(&mut rng)?,
        };
        max_error = max_error.max(e);
    }
    Ok(ProbeReport {
        op,
        probes,
        max_error,
        tolerance: op.tolerance(),
    })
}

const MAX_REJECTIONS: usize = 10_000;

fn disparity(w: usize, h: usize, values: &[f64]) -> Result<DisparityMap> {
    DisparityMap::from_values(w, h, values.to_vec())
}

/// Prediction in [0.5, 2] and a target that is an affine image of it plus
/// noise, so the fit is well conditioned.
fn random_pair<R: Rng>(rng: &mut R, n: usize, noise: f64) -> (Vec<f64>, Vec<f64>) {
    let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let gt = pred
        .iter()
        .map(|p| 0.8 * p + 0.3 + rng.random_range(-noise..noise))
        .map(|g: f64| g.max(0.0))
        .collect();
    (pred, gt)
}

fn check_ssi<R: Rng>(rng: &mut R) -> Result<f64> {
    const W: usize = 12;
    let n = W * W;
    for _ in 0..MAX_REJECTIONS {
        let (pred, gt) = random_pair(rng, n, 0.3);
        let pm = disparity(W, W, &pred)?;
        let gm = disparity(W, W, &gt)?;
        // A step moves the perturbed residual by about |s|·h and the others by
        // far less; demand a clear gap at the trim boundary.
        let fit = align_lsq(&pm, &gm, None)?;
        let mut mag: Vec<f64> = (0..n).map(|i| (fit.apply(pred[i]) - gt[i]).abs()).collect();
        mag.sort_by(|a, b| b.total_cmp(a));
        let d = trim_count(n, DEFAULT_TRIM);
        if mag[d - 1] - mag[d] < 10.0 * DEFAULT_STEP * (1.0 + fit.scale.abs()) {
            continue;
        }
        let (_, dropped) = loss_ssi_with_trim_set(&pm, &gm, DEFAULT_TRIM)?;
        let mut kept = vec![true; n];
        for i in dropped {
            kept[i] = false;
        }
        return gradcheck(
            |x| {
                let r = loss_ssi_with_trim_set(&disparity(W, W, x)?, &gm, DEFAULT_TRIM)?.0;
                Ok((r.value, r.grad))
            },
            &pred,
            DEFAULT_STEP,
            Some(&kept),
        );
    }
    Err(Error::Degenerate("no smooth ssi probe found".into()))
}

fn check_gm<R: Rng>(rng: &mut R) -> Result<f64> {
    const W: usize = 16;
    for _ in 0..MAX_REJECTIONS {
        let (pred, gt) = random_pair(rng, W * W, 0.5);
        let pm = disparity(W, W, &pred)?;
        let gm = disparity(W, W, &gt)?;
        if min_abs_difference(&pm, &gm, DEFAULT_GM_SCALES)? < 1e-3 {
            continue;
        }
        return gradcheck(
            |x| {
                let r = loss_gm(&disparity(W, W, x)?, &gm, DEFAULT_GM_SCALES)?;
                Ok((r.value, r.grad))
            },
            &pred,
            DEFAULT_STEP,
            None,
        );
    }
    Err(Error::Degenerate("no smooth gm probe found".into()))
}

fn check_cosine<R: Rng>(rng: &mut R) -> Result<f64> {
    const W: usize = 8;
    let gen: Vec<f64> = (0..W * W).map(|_| rng.random_range(0.5..5.0)).collect();
    let src: Vec<f64> = (0..W * W).map(|_| rng.random_range(0.5..5.0)).collect();
    let src = DepthMap::from_values(W, W, src)?;
    gradcheck(
        |x| {
            let r = cosine_depth_loss(&DepthMap::from_values(W, W, x.to_vec())?, &src)?;
            Ok((r.value, r.grad))
        },
        &gen,
        DEFAULT_STEP,
        None,
    )
}

fn check_aesthetic<R: Rng>(rng: &mut R) -> Result<f64> {
    const DIM: usize = 64;
    let mlp = MlpWeights::random(&[DIM, 16, 8, 1], rng.random())?;
    for _ in 0..MAX_REJECTIONS {
        let e = Embedding((0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect());
        if mlp.min_hidden_margin(&e).is_some_and(|m| m < 1e-3) {
            continue;
        }
        return gradcheck(
            |x| aesthetic_score(&Embedding(x.to_vec()), &mlp),
            &e.0,
            DEFAULT_STEP,
            None,
        );
    }
    Err(Error::Degenerate("no smooth aesthetic probe found".into()))
}
