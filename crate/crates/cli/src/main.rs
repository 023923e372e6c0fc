use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use depthcur::eval::{run_eval, EvalConfig};
use depthcur::fusion::FusionConfig;
use depthcur::io::{load_depth, load_rgb, save_mask, DepthFormat};
use depthcur::losses::gradcheck::{run_probes, ProbeOp};
use depthcur::losses::{rl_total_loss, MlpWeights, RewardWeights};
use depthcur::pipeline::{run_pipeline, PipelineConfig};
use depthcur::registration::{register, RegistrationParams};
use depthcur::ssim::{mean_ssim, ssim_map, threshold_map, SsimParams};
use depthcur::DepthMap;

#[derive(Debug, Parser)]
#[command(name = "depthcur", version, about = "Depth supervision curation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build fusion masks and supervision records for every manifest entry.
    Curate {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.85)]
        ssim_threshold: f64,
        #[arg(long, default_value_t = 10)]
        min_matches: usize,
        #[arg(long, default_value_t = 0.5)]
        min_valid_fraction: f64,
        #[arg(long, default_value_t = 518)]
        crop: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to DEPTHCUR_WORKERS, then to the number of CPUs.
        #[arg(long, env = "DEPTHCUR_WORKERS")]
        workers: Option<usize>,
    },
    /// Score predicted disparities against ground-truth depth.
    Eval {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.25)]
        delta: f64,
        #[arg(long)]
        max_depth: Option<f64>,
        /// Also write one CSV row per sample.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate the generator objective for one sample.
    Reward {
        depth_gen: PathBuf,
        depth_src: PathBuf,
        image: PathBuf,
        #[arg(long)]
        mlp: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        lambda_depth: f64,
        #[arg(long, default_value_t = 0.1)]
        lambda_aesthetic: f64,
        /// Metres per code for 16-bit PNG depth.
        #[arg(long, default_value_t = 1.0)]
        depth_scale: f64,
    },
    /// SSIM between two images; the second is resized to the first if needed.
    Ssim {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 0.85)]
        threshold: f64,
        /// Write the thresholded mask as PNG.
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Estimate the affine transform taking `gen` onto `orig`.
    Register {
        gen: PathBuf,
        orig: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check analytic loss gradients against finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = OpArg::All)]
        op: OpArg,
        #[arg(long, default_value_t = 20)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OpArg {
    All,
    Ssi,
    Gm,
    Cosine,
    Aesthetic,
}

/// A result that ran to completion but failed its check.
#[derive(Debug)]
struct ValidationFailed(String);

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ValidationFailed>().is_some() {
        return 2;
    }
    match err.downcast_ref::<depthcur::Error>() {
        Some(
            depthcur::Error::Degenerate(_)
            | depthcur::Error::Empty(_)
            | depthcur::Error::DimensionMismatch { .. }
            | depthcur::Error::Rejected,
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_depth_any(path: &Path, scale: f64) -> Result<DepthMap> {
    let format = DepthFormat::from_path(path)
        .ok_or_else(|| anyhow!("cannot infer depth format of {}", path.display()))?;
    Ok(load_depth(path, format, scale)?)
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Curate {
            manifest,
            out,
            ssim_threshold,
            min_matches,
            min_valid_fraction,
            crop,
            seed,
            workers,
        } => {
            let workers = match workers {
                Some(n) => n,
                None => std::thread::available_parallelism().map_or(1, |n| n.get()),
            };
            let cfg = PipelineConfig {
                fusion: FusionConfig {
                    ssim_threshold,
                    min_matches,
                    min_valid_fraction,
                    crop_size: crop,
                    ..FusionConfig::default()
                },
                global_seed: seed,
                workers,
                out_dir: out,
                ..PipelineConfig::default()
            };
            let summary = run_pipeline(&manifest, &cfg)
                .with_context(|| format!("curating {}", manifest.display()))?;
            print_json(&serde_json::to_value(summary)?)
        }
        Command::Eval {
            manifest,
            out,
            delta,
            max_depth,
            csv,
        } => {
            let cfg = EvalConfig {
                delta_threshold: delta,
                max_depth,
                ..EvalConfig::default()
            };
            let report = run_eval(&manifest, &cfg)
                .with_context(|| format!("evaluating {}", manifest.display()))?;
            std::fs::write(&out, report.to_json_pretty() + "\n")
                .with_context(|| format!("writing {}", out.display()))?;
            if let Some(path) = csv {
                let file = std::fs::File::create(&path)
                    .with_context(|| format!("writing {}", path.display()))?;
                report.write_csv(file)?;
            }
            print_json(&serde_json::to_value(report.aggregate)?)
        }
        Command::Reward {
            depth_gen,
            depth_src,
            image,
            mlp,
            lambda_depth,
            lambda_aesthetic,
            depth_scale,
        } => {
            let weights = RewardWeights {
                lambda_depth,
                lambda_aesthetic,
            };
            weights.validate()?;
            let d_gen = load_depth_any(&depth_gen, depth_scale)?;
            let d_src = load_depth_any(&depth_src, depth_scale)?;
            let img = load_rgb(&image)?;
            let mlp = MlpWeights::load(&mlp)?;
            let r = rl_total_loss(&d_gen, &d_src, &img, &mlp, &weights)?;
            print_json(&json!({
                "value": r.value,
                "depth_loss": r.depth_loss,
                "aesthetic_score": r.aesthetic_score,
            }))
        }
        Command::Ssim {
            a,
            b,
            threshold,
            mask_out,
        } => {
            let params = SsimParams::with_threshold(threshold);
            params.validate()?;
            let a = load_rgb(&a)?;
            let mut b = load_rgb(&b)?;
            if b.dims() != a.dims() {
                b = b.resize_bilinear(a.width(), a.height())?;
            }
            let map = ssim_map(&a.to_luma(), &b.to_luma(), &params, None)?;
            let mask = threshold_map(&map, threshold);
            if let Some(path) = mask_out {
                save_mask(&mask, &path)?;
            }
            let total = (mask.width() * mask.height()) as f64;
            print_json(&json!({
                "mean_ssim": mean_ssim(&map)?,
                "above_threshold": mask.count_ones() as f64 / total,
            }))
        }
        Command::Register { gen, orig, seed } => {
            use rand::SeedableRng;
            let gen = load_rgb(&gen)?;
            let orig = load_rgb(&orig)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let reg = register(&gen, &orig, &RegistrationParams::default(), &mut rng);
            print_json(&serde_json::to_value(reg.result)?)
        }
        Command::Gradcheck { op, probes, seed } => {
            let ops: Vec<ProbeOp> = match op {
                OpArg::All => ProbeOp::ALL.to_vec(),
                OpArg::Ssi => vec![ProbeOp::Ssi],
                OpArg::Gm => vec![ProbeOp::Gm],
                OpArg::Cosine => vec![ProbeOp::Cosine],
                OpArg::Aesthetic => vec![ProbeOp::Aesthetic],
            };
            let mut failed = Vec::new();
            for op in ops {
                let r = run_probes(op, probes, seed)?;
                println!(
                    "{:<10} probes={} max_rel_err={:.3e} tol={:.0e} {}",
                    op.name(),
                    r.probes,
                    r.max_error,
                    r.tolerance,
                    if r.passed() { "ok" } else { "FAIL" }
                );
                if !r.passed() {
                    failed.push(op.name());
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(ValidationFailed(format!("gradient check failed for {}", failed.join(", "))).into())
            }
        }
    }
}
