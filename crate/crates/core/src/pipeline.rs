//! Manifest-driven curation runs: per-entry fusion, supervision records,
//! mask artifacts and run summaries.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::fusion::{build_fusion_mask, supervision_counts, FusionConfig, FusionOutcome};
use crate::io::{encode_mask_png, load_depth, load_rgb, DepthFormat};
use crate::jsonl::{self, Identified};
use crate::losses::{DepthLossWeights, RewardWeights};
use crate::raster::{DepthMap, Rect, RgbImage};
use crate::registration::RegistrationResult;

/// Generated variants allowed per entry.
pub const MAX_VARIANTS: usize = 4;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MASK_DIR: &str = "masks";

/// One line of a curation manifest. Relative paths are resolved against the
/// manifest's directory; unknown fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Ground-truth depth aligned with `rgb_orig`.
    pub depth_source: PathBuf,
    #[serde(default)]
    pub depth_format: Option<DepthFormat>,
    #[serde(default = "unit_scale")]
    pub depth_scale: f64,
    pub rgb_orig: PathBuf,
    pub rgb_gen: Vec<PathBuf>,
    #[serde(default)]
    pub depth_pseudo: Option<PathBuf>,
    #[serde(default)]
    pub seed_tag: i64,
}

fn unit_scale() -> f64 {
    1.0
}

impl Identified for ManifestEntry {
    fn id(&self) -> &str {
        &self.id
    }

    fn check(&self) -> std::result::Result<(), String> {
        match self.rgb_gen.len() {
            0 => Err("rgb_gen must list at least one image".into()),
            n if n > MAX_VARIANTS => Err(format!(
                "rgb_gen lists {n} images; at most {MAX_VARIANTS} are allowed"
            )),
            _ => Ok(()),
        }
    }
}

/// Parses a JSONL manifest: one object per line, blank lines skipped.
pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    jsonl::read_lines(path)
}

pub fn parse_manifest_str(text: &str) -> Result<Vec<ManifestEntry>> {
    jsonl::parse_lines(text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub fusion: FusionConfig,
    pub eval: EvalConfig,
    pub reward: RewardWeights,
    pub depth_loss: DepthLossWeights,
    pub global_seed: u64,
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fusion: FusionConfig::default(),
            eval: EvalConfig::default(),
            reward: RewardWeights::default(),
            depth_loss: DepthLossWeights::default(),
            global_seed: 0,
            workers: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidParameter("worker count must be at least 1".into()));
        }
        self.fusion.validate()?;
        self.eval.validate()?;
        self.reward.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationRecord {
    pub id: String,
    pub variant: usize,
    pub stage: Stage,
    pub accepted: bool,
    pub valid_fraction: f64,
    pub crop: Option<Rect>,
    /// Relative to the output directory.
    pub mask_path: Option<String>,
    pub gt_pixel_count: usize,
    pub pseudo_pixel_count: usize,
    pub mean_ssim_registered: Option<f64>,
    pub mean_ssim_direct: Option<f64>,
    pub registration: RegistrationResult,
    pub rgb_gen: PathBuf,
    pub depth_source: PathBuf,
    pub depth_pseudo: Option<PathBuf>,
    pub seed_tag: i64,
}

/// Output-relative path of the mask for one variant.
pub fn mask_rel_path(id: &str, variant: usize) -> String {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{MASK_DIR}/{safe}_v{variant}.png")
}

fn base_record(
    outcome: &FusionOutcome,
    entry: &ManifestEntry,
    variant: usize,
    stage: Stage,
) -> CurationRecord {
    CurationRecord {
        id: entry.id.clone(),
        variant,
        stage,
        accepted: false,
        valid_fraction: outcome.valid_fraction,
        crop: None,
        mask_path: None,
        gt_pixel_count: 0,
        pseudo_pixel_count: 0,
        mean_ssim_registered: outcome.mean_ssim_registered,
        mean_ssim_direct: outcome.mean_ssim_direct,
        registration: outcome.registration,
        rgb_gen: entry.rgb_gen[variant].clone(),
        depth_source: entry.depth_source.clone(),
        depth_pseudo: entry.depth_pseudo.clone(),
        seed_tag: entry.seed_tag,
    }
}

/// Fine-tuning record for an accepted outcome: inside the crop, mask pixels
/// take ground-truth depth and the rest take pseudo labels.
pub fn assign_supervision(
    outcome: &FusionOutcome,
    entry: &ManifestEntry,
    variant: usize,
) -> Result<CurationRecord> {
    let crop = match (outcome.accepted, outcome.crop) {
        (true, Some(c)) => c,
        _ => return Err(Error::Rejected),
    };
    if variant >= entry.rgb_gen.len() {
        return Err(Error::InvalidParameter(format!(
            "variant {variant} out of range for entry {:?}",
            entry.id
        )));
    }
    let (gt, pseudo) = supervision_counts(&outcome.mask, crop);
    Ok(CurationRecord {
        accepted: true,
        crop: Some(crop),
        mask_path: Some(mask_rel_path(&entry.id, variant)),
        gt_pixel_count: gt,
        pseudo_pixel_count: pseudo,
        ..base_record(outcome, entry, variant, Stage::Finetune)
    })
}

fn rejected_record(outcome: &FusionOutcome, entry: &ManifestEntry, variant: usize) -> CurationRecord {
    base_record(outcome, entry, variant, Stage::Finetune)
}

/// Pre-training record: the whole generated image under pseudo labels.
fn pretrain_record(
    outcome: &FusionOutcome,
    entry: &ManifestEntry,
    variant: usize,
    pixels: usize,
) -> CurationRecord {
    CurationRecord {
        pseudo_pixel_count: pixels,
        ..base_record(outcome, entry, variant, Stage::Pretrain)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Seed of the generator used for one (entry, variant) pair.
pub fn variant_seed(global_seed: u64, id: &str, variant: usize) -> u64 {
    let h = splitmix64(global_seed);
    let h = splitmix64(h ^ fnv1a(id));
    splitmix64(h ^ variant as u64)
}

struct LoadedEntry {
    orig: RgbImage,
    depth: DepthMap,
    gens: Vec<RgbImage>,
}

fn load_entry(entry: &ManifestEntry, base: &Path) -> Result<LoadedEntry> {
    let depth_path = jsonl::resolve(base, &entry.depth_source);
    let format = entry
        .depth_format
        .or_else(|| DepthFormat::from_path(&depth_path))
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "cannot infer depth format of {}",
                depth_path.display()
            ))
        })?;
    Ok(LoadedEntry {
        orig: load_rgb(&jsonl::resolve(base, &entry.rgb_orig))?,
        depth: load_depth(&depth_path, format, entry.depth_scale)?,
        gens: entry
            .rgb_gen
            .iter()
            .map(|p| load_rgb(&jsonl::resolve(base, p)))
            .collect::<Result<_>>()?,
    })
}

/// Curates every generated variant of one entry and writes masks of the
/// accepted ones under `cfg.out_dir`. `manifest` locates relative paths.
pub fn curate_entry(
    entry: &ManifestEntry,
    manifest: &Path,
    cfg: &PipelineConfig,
) -> Result<Vec<CurationRecord>> {
    let loaded = load_entry(entry, manifest)?;
    let (w, h) = loaded.orig.dims();
    let mut records = Vec::with_capacity(2 * loaded.gens.len());
    let mut masks = Vec::new();
    for (variant, gen) in loaded.gens.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(variant_seed(cfg.global_seed, &entry.id, variant));
        let outcome = build_fusion_mask(gen, &loaded.orig, &loaded.depth, &cfg.fusion, &mut rng)?;
        records.push(pretrain_record(&outcome, entry, variant, w * h));
        if outcome.accepted {
            let rec = assign_supervision(&outcome, entry, variant)?;
            let rel = rec.mask_path.clone().expect("accepted record has a mask");
            masks.push((rel, encode_mask_png(&outcome.mask)?));
            records.push(rec);
        } else {
            records.push(rejected_record(&outcome, entry, variant));
        }
    }
    for (rel, bytes) in masks {
        jsonl::write_atomic(&cfg.out_dir.join(rel), &bytes)?;
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    /// Manifest entries attempted.
    pub processed: usize,
    /// Fine-tuning variant records accepted.
    pub accepted: usize,
    pub rejected: usize,
    /// Entries that could not be curated.
    pub failed: usize,
    /// Mean over fine-tuning variant records; 0 when there are none.
    pub mean_valid_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub id: String,
    pub error: String,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    tool_version: &'a str,
    config: &'a PipelineConfig,
    summary: Summary,
}

/// Curates every manifest entry on a pool of `cfg.workers` threads and writes
/// `records.jsonl`, `failures.jsonl`, `summary.json` and the accepted masks.
/// Output bytes depend only on the manifest, the config and the seed.
pub fn run_pipeline(manifest: &Path, cfg: &PipelineConfig) -> Result<Summary> {
    cfg.validate()?;
    let entries = parse_manifest(manifest)?;
    let mask_dir = cfg.out_dir.join(MASK_DIR);
    std::fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(String, Result<Vec<CurationRecord>>)> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| (e.id.clone(), curate_entry(e, manifest, cfg)))
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(mut recs) => records.append(&mut recs),
            // An unwritable output directory is fatal rather than per-entry.
            Err(e @ Error::Io { .. }) if e_is_output(&e, &cfg.out_dir) => return Err(e),
            Err(e) => failures.push(FailureRecord {
                id,
                error: e.to_string(),
            }),
        }
    }
    records.sort_by(|a, b| (&a.id, a.variant, a.stage).cmp(&(&b.id, b.variant, b.stage)));
    failures.sort_by(|a, b| a.id.cmp(&b.id));

    let finetune: Vec<&CurationRecord> =
        records.iter().filter(|r| r.stage == Stage::Finetune).collect();
    let accepted = finetune.iter().filter(|r| r.accepted).count();
    let summary = Summary {
        processed: entries.len(),
        accepted,
        rejected: finetune.len() - accepted,
        failed: failures.len(),
        mean_valid_fraction: if finetune.is_empty() {
            0.0
        } else {
            finetune.iter().map(|r| r.valid_fraction).sum::<f64>() / finetune.len() as f64
        },
    };

    jsonl::write_atomic(&cfg.out_dir.join(RECORDS_FILE), &to_jsonl(&records)?)?;
    jsonl::write_atomic(&cfg.out_dir.join(FAILURES_FILE), &to_jsonl(&failures)?)?;
    let file = SummaryFile {
        tool_version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        summary,
    };
    let mut text = serde_json::to_vec_pretty(&file)?;
    text.push(b'\n');
    jsonl::write_atomic(&cfg.out_dir.join(SUMMARY_FILE), &text)?;
    Ok(summary)
}

fn e_is_output(e: &Error, out_dir: &Path) -> bool {
    matches!(e, Error::Io { path, .. } if path.starts_with(out_dir))
}

fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}
