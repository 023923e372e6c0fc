//! Affine-invariant depth evaluation: alignment in inverse-depth space,
//! metrics in depth space.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_depth, load_disparity_pfm, DepthFormat};
use crate::jsonl::{self, Identified};
use crate::losses::align_lsq;
use crate::raster::{DepthMap, DisparityMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub delta_threshold: f64,
    /// Floor applied to the aligned disparity before inversion.
    pub min_disparity: f64,
    /// Ground-truth pixels deeper than this are excluded.
    pub max_depth: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            delta_threshold: 1.25,
            min_disparity: 1e-6,
            max_depth: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_threshold > 1.0 && self.delta_threshold.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta threshold must exceed 1, got {}",
                self.delta_threshold
            )));
        }
        if !(self.min_disparity > 0.0 && self.min_disparity.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "disparity floor must be positive, got {}",
                self.min_disparity
            )));
        }
        if let Some(m) = self.max_depth {
            if !(m > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "max depth must be positive, got {m}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub absrel: f64,
    pub delta1: f64,
    pub rmse: f64,
    pub valid_pixels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub absrel: f64,
    pub delta1: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    pub config: EvalConfig,
    pub samples: Vec<SampleMetrics>,
    pub aggregate: AggregateMetrics,
}

fn joint_pairs<'a>(
    pred: &'a DepthMap,
    gt: &'a DepthMap,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            found: pred.dims(),
        });
    }
    let mut it = (0..gt.len())
        .filter(|&i| pred.valid()[i] && gt.valid()[i])
        .map(|i| (pred.values()[i], gt.values()[i]))
        .peekable();
    if it.peek().is_none() {
        return Err(Error::Empty("no jointly valid depth pixels"));
    }
    Ok(it)
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Mean `|pred − gt| / gt` over jointly valid pixels.
pub fn absrel(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    Ok(mean(joint_pairs(pred, gt)?.map(|(p, g)| (p - g).abs() / g)))
}

/// Fraction of jointly valid pixels with `max(pred/gt, gt/pred) < threshold`.
pub fn delta1(pred: &DepthMap, gt: &DepthMap, threshold: f64) -> Result<f64> {
    Ok(mean(joint_pairs(pred, gt)?.map(|(p, g)| {
        if (p / g).max(g / p) < threshold {
            1.0
        } else {
            0.0
        }
    })))
}

pub fn rmse(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    Ok(mean(joint_pairs(pred, gt)?.map(|(p, g)| (p - g) * (p - g))).sqrt())
}

/// Aligns `pred_disp` to the inverse of `gt_depth` by least squares, inverts
/// the floored aligned disparity and scores it against `gt_depth`.
pub fn evaluate_sample(
    id: &str,
    pred_disp: &DisparityMap,
    gt_depth: &DepthMap,
    cfg: &EvalConfig,
) -> Result<SampleMetrics> {
    cfg.validate()?;
    if pred_disp.dims() != gt_depth.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt_depth.dims(),
            found: pred_disp.dims(),
        });
    }
    let in_range: Vec<bool> = gt_depth
        .values()
        .iter()
        .zip(gt_depth.valid())
        .map(|(d, ok)| *ok && cfg.max_depth.is_none_or(|m| *d <= m))
        .collect();
    let gt_disp = gt_depth.to_disparity();
    let fit = align_lsq(pred_disp, &gt_disp, Some(&in_range))?;

    let (w, h) = gt_depth.dims();
    let mut values = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for &i in fit.pixels() {
        values[i] = 1.0 / fit.apply(pred_disp.values()[i]).max(cfg.min_disparity);
        valid[i] = true;
    }
    let pred_depth = DepthMap::new(w, h, values, valid)?;
    Ok(SampleMetrics {
        id: id.to_string(),
        absrel: absrel(&pred_depth, gt_depth)?,
        delta1: delta1(&pred_depth, gt_depth, cfg.delta_threshold)?,
        rmse: rmse(&pred_depth, gt_depth)?,
        valid_pixels: fit.pixels().len(),
    })
}

/// Sorts samples by id and averages each metric without weighting.
pub fn aggregate(mut samples: Vec<SampleMetrics>, config: EvalConfig) -> Result<Report> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to aggregate"));
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    let n = samples.len() as f64;
    let sum = |f: fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let aggregate = AggregateMetrics {
        absrel: sum(|s| s.absrel),
        delta1: sum(|s| s.delta1),
        rmse: sum(|s| s.rmse),
    };
    Ok(Report {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        samples,
        aggregate,
    })
}

impl Report {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One row per sample: `id,absrel,delta1,rmse,valid_pixels`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            w.serialize(s).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::format("csv", e.to_string())
}

/// One line of an evaluation manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub id: String,
    /// Predicted disparity, PFM.
    pub pred_disparity: PathBuf,
    pub gt_depth: PathBuf,
    #[serde(default)]
    pub gt_format: Option<DepthFormat>,
    #[serde(default = "unit_scale")]
    pub gt_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl Identified for EvalEntry {
    fn id(&self) -> &str {
        &self.id
    }
}

pub fn parse_eval_manifest(path: &Path) -> Result<Vec<EvalEntry>> {
    jsonl::read_lines(path)
}

/// Evaluates every manifest entry in parallel on the current rayon pool.
/// Relative paths are taken from the manifest's directory.
pub fn run_eval(manifest: &Path, cfg: &EvalConfig) -> Result<Report> {
    cfg.validate()?;
    let entries = parse_eval_manifest(manifest)?;
    let samples = entries
        .par_iter()
        .map(|e| {
            let pred = load_disparity_pfm(&jsonl::resolve(manifest, &e.pred_disparity))?;
            let gt_path = jsonl::resolve(manifest, &e.gt_depth);
            let format = e
                .gt_format
                .or_else(|| DepthFormat::from_path(&gt_path))
                .ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "cannot infer depth format of {}",
                        gt_path.display()
                    ))
                })?;
            let gt = load_depth(&gt_path, format, e.gt_scale)?;
            evaluate_sample(&e.id, &pred, &gt, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(samples, *cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn depth(v: &[f64]) -> DepthMap {
        DepthMap::from_values(v.len(), 1, v.to_vec()).unwrap()
    }

    fn scaled(v: &[f64], c: f64) -> DepthMap {
        depth(&v.iter().map(|x| x * c).collect::<Vec<_>>())
    }

    const GT: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

    #[test]
    fn absrel_cases() {
        let gt = depth(&GT);
        assert_eq!(absrel(&gt, &gt).unwrap(), 0.0);
        assert!((absrel(&scaled(&GT, 1.1), &gt).unwrap() - 0.1).abs() < 1e-12);
        let mixed = depth(&[1.0, 2.0, 8.0, 16.0]);
        assert!((absrel(&mixed, &gt).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn delta1_step() {
        let gt = depth(&GT);
        assert_eq!(delta1(&gt, &gt, 1.25).unwrap(), 1.0);
        assert_eq!(delta1(&scaled(&GT, 1.3), &gt, 1.25).unwrap(), 0.0);
        assert_eq!(delta1(&scaled(&GT, 1.2), &gt, 1.25).unwrap(), 1.0);
    }

    #[test]
    fn rmse_cases() {
        let gt = depth(&GT);
        assert_eq!(rmse(&gt, &gt).unwrap(), 0.0);
        let plus = depth(&GT.map(|v| v + 2.0));
        assert!((rmse(&plus, &gt).unwrap() - 2.0).abs() < 1e-12);
        let pm = depth(&[4.0, 5.0, 1.0, 5.0]);
        assert!((rmse(&pm, &gt).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_valid_set() {
        let a = DepthMap::new(2, 1, vec![1.0, 1.0], vec![true, false]).unwrap();
        let b = DepthMap::new(2, 1, vec![1.0, 1.0], vec![false, true]).unwrap();
        assert!(absrel(&a, &b).is_err());
        assert!(delta1(&a, &b, 1.25).is_err());
        assert!(rmse(&a, &b).is_err());
    }

    #[test]
    fn affine_prediction_is_exact() {
        let gt = depth(&GT);
        let pred = DisparityMap::from_values(
            4,
            1,
            GT.iter().map(|d| 3.0 / d + 0.5).collect(),
        )
        .unwrap();
        let m = evaluate_sample("a", &pred, &gt, &EvalConfig::default()).unwrap();
        assert!(m.absrel < 1e-12 && m.rmse < 1e-10);
        assert_eq!(m.delta1, 1.0);
        assert_eq!(m.valid_pixels, 4);
    }

    #[test]
    fn floored_pixel_stays_finite() {
        // Aligned disparity at the last pixel lands far below zero.
        let gt = depth(&[1.0, 1.0, 2.0, 2.0, 4.0]);
        let pred = DisparityMap::from_values(5, 1, vec![1.0, 1.0, 0.5, 0.5, 40.0]).unwrap();
        let m = evaluate_sample("f", &pred, &gt, &EvalConfig::default()).unwrap();
        assert!(m.absrel.is_finite() && m.rmse.is_finite());
    }

    #[test]
    fn max_depth_excludes_far_pixels() {
        let gt = depth(&[1.0, 2.0, 4.0, 100.0]);
        let mut v: Vec<f64> = gt.values().iter().map(|d| 1.0 / d).collect();
        v[3] = 5.0;
        let pred = DisparityMap::from_values(4, 1, v).unwrap();
        let cfg = EvalConfig {
            max_depth: Some(10.0),
            ..EvalConfig::default()
        };
        let m = evaluate_sample("m", &pred, &gt, &cfg).unwrap();
        assert_eq!(m.valid_pixels, 3);
        assert!(m.absrel < 1e-12);
    }

    fn metrics(id: &str, absrel: f64) -> SampleMetrics {
        SampleMetrics {
            id: id.into(),
            absrel,
            delta1: 1.0,
            rmse: absrel * 2.0,
            valid_pixels: 10,
        }
    }

    #[test]
    fn aggregate_means_and_order() {
        let cfg = EvalConfig::default();
        let one = aggregate(vec![metrics("a", 0.1)], cfg).unwrap();
        assert_eq!(one.aggregate.absrel, 0.1);
        let r = aggregate(vec![metrics("b", 0.3), metrics("a", 0.1)], cfg).unwrap();
        assert!((r.aggregate.absrel - 0.2).abs() < 1e-15);
        let p = aggregate(vec![metrics("a", 0.1), metrics("b", 0.3)], cfg).unwrap();
        assert_eq!(r, p);
        assert!(aggregate(Vec::new(), cfg).is_err());
    }

    #[test]
    fn csv_rows() {
        let r = aggregate(vec![metrics("a", 0.5)], EvalConfig::default()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "id,absrel,delta1,rmse,valid_pixels\na,0.5,1.0,1.0,10\n");
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig::default().validate().is_ok());
        let bad = EvalConfig {
            delta_threshold: 1.0,
            ..EvalConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
