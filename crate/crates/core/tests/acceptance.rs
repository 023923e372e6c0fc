//! Acceptance gate: one line per criterion, non-zero exit if any gating
//! criterion fails. Run with `cargo test -p depthcur-core --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;

use common::{brute_ssim, correspondences, eval_oracle, random_gray, rng, smooth_gray, snapshot, write_fixture, EntryKind};
use depthcur::eval::{evaluate_sample, EvalConfig};
use depthcur::fusion::{build_fusion_mask, FusionConfig};
use depthcur::losses::gradcheck::{run_probes, ProbeOp};
use depthcur::losses::{
    aesthetic_score, cosine_depth_loss, loss_gm, loss_ssi, loss_ssi_with_trim_set, rl_total_loss,
    toy_embed, trim_count, DepthLossWeights, Embedding, MlpWeights, RewardWeights,
    DEFAULT_GM_SCALES, DEFAULT_TRIM,
};
use depthcur::pipeline::{run_pipeline, PipelineConfig};
use depthcur::registration::{estimate_affine_ransac, register, RansacParams, RegistrationParams};
use depthcur::ssim::{ssim_map, SsimParams};
use depthcur::synth::{corrupted_rgb, noise_rgb, smooth_depth, textured_rgb};
use depthcur::{DepthMap, DisparityMap, RgbImage};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Gate {
    failed: Vec<u32>,
}

impl Gate {
    fn run(&mut self, id: u32, name: &str, budget: Duration, gating: bool, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let res = match res {
            Ok(d) if elapsed > budget => Err(format!("{d}; took {elapsed:.2?}, budget {budget:?}")),
            other => other,
        };
        let tag = match (&res, gating) {
            (Ok(_), true) => "PASS",
            (Err(_), true) => "FAIL",
            (Ok(_), false) => "PASS (soft)",
            (Err(_), false) => "FAIL (soft, non-gating)",
        };
        let detail = match &res {
            Ok(d) | Err(d) => d,
        };
        println!("[{id:>2}] {tag:<5} {name} ({elapsed:.2?}): {detail}");
        if res.is_err() && gating {
            self.failed.push(id);
        }
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn c1_constants() -> Outcome {
    let cfg = PipelineConfig::default();
    let f = &cfg.fusion;
    ensure!(f.ssim_threshold == 0.85, "ssim threshold {}", f.ssim_threshold);
    ensure!(f.min_matches == 10, "min matches {}", f.min_matches);
    ensure!(f.min_valid_fraction == 0.5, "valid fraction {}", f.min_valid_fraction);
    ensure!(f.erosion_kernel().side() == 3, "erosion {}", f.erosion_kernel().side());
    ensure!(f.crop_size == 518, "crop {}", f.crop_size);
    ensure!(cfg.reward == RewardWeights { lambda_depth: 0.9, lambda_aesthetic: 0.1 }, "{:?}", cfg.reward);
    let d = DepthLossWeights::default();
    ensure!(d.ssi == 1.0 && d.gm == 4.0, "ssi:gm = {}:{}", d.ssi, d.gm);
    ensure!(d.trim == 0.10 && DEFAULT_TRIM == 0.10, "trim {}", d.trim);
    ensure!(cfg.eval.delta_threshold == 1.25, "delta {}", cfg.eval.delta_threshold);
    ensure!(cfg.validate().is_ok(), "default config fails validation");
    Ok("defaults match the implementation constants".into())
}

fn c2_ssim_oracle() -> Outcome {
    let mut r = rng(2);
    let params = SsimParams::default();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (w, h) = (r.random_range(1..=32), r.random_range(1..=32));
        let a = smooth_gray(w, h, &mut r);
        let b = smooth_gray(w, h, &mut r);
        let got = ssim_map(&a, &b, &params, None).map_err(|e| e.to_string())?;
        let (want, _) = brute_ssim(&a, &b, None);
        for (g, w) in got.values().iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    ensure!(worst < 1e-6, "max deviation {worst:e}");
    let mut self_worst = 0.0f64;
    for _ in 0..10 {
        let a = random_gray(32, 32, &mut r);
        let m = ssim_map(&a, &a, &params, None).map_err(|e| e.to_string())?;
        for v in m.values() {
            self_worst = self_worst.max((v - 1.0).abs());
        }
    }
    ensure!(self_worst < 1e-9, "self-SSIM off by {self_worst:e}");
    Ok(format!("max |Δ| vs brute force {worst:.1e}; self-SSIM within {self_worst:.1e}"))
}

fn c3_registration() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let c = correspondences(1000 + seed, 100, 0.7, 0.1);
        let (t, _) = estimate_affine_ransac(&c.src, &c.dst, &RansacParams::default(), &mut rng(seed))
            .map_err(|e| format!("fixture {seed}: {e}"))?;
        for i in (0..c.src.len()).filter(|&i| c.inlier[i]) {
            let (x, y) = t.apply(c.src[i].0, c.src[i].1);
            worst = worst.max(((x - c.dst[i].0).powi(2) + (y - c.dst[i].1).powi(2)).sqrt());
        }
    }
    ensure!(worst < 0.5, "inlier reprojection error {worst:.3} px");
    for (k, (a, b)) in [
        (RgbImage::filled(128, 128, [90, 90, 90]).unwrap(), RgbImage::filled(128, 128, [90, 90, 90]).unwrap()),
        (RgbImage::filled(16, 16, [0, 0, 0]).unwrap(), textured_rgb(16, 16, 1)),
    ]
    .into_iter()
    .enumerate()
    {
        let reg = register(&a, &b, &RegistrationParams::default(), &mut rng(k as u64));
        ensure!(!reg.result.succeeded, "featureless pair {k} reported success");
        ensure!(reg.coverage.count_ones() == 0, "featureless pair {k} has coverage");
    }
    Ok(format!("max inlier reprojection {worst:.3} px over 20 fixtures; featureless pairs fail cleanly"))
}

fn c4_fusion() -> Outcome {
    let cfg = FusionConfig {
        crop_size: 96,
        ..FusionConfig::default()
    };
    let (w, h) = (192, 160);
    let orig = textured_rgb(w, h, 40);
    let depth = smooth_depth(w, h, 40);
    let run = |gen: &RgbImage| build_fusion_mask(gen, &orig, &depth, &cfg, &mut rng(4)).map_err(|e| e.to_string());

    let same = run(&orig)?;
    ensure!(same.accepted && same.valid_fraction > 0.95, "self pair: accepted={} vf={}", same.accepted, same.valid_fraction);
    let noise = run(&noise_rgb(w, h, 41))?;
    ensure!(!noise.accepted && noise.valid_fraction < 0.05, "noise pair: accepted={} vf={}", noise.accepted, noise.valid_fraction);
    let half = run(&corrupted_rgb(&orig, 42, |x, _| x >= w / 2))?;
    let total = half.mask.count_ones();
    let clean = (0..h)
        .flat_map(|y| (0..w / 2).map(move |x| (x, y)))
        .filter(|&(x, y)| half.mask.get(x, y))
        .count();
    ensure!(total > 0, "half-corrupted mask is empty");
    let frac = clean as f64 / total as f64;
    ensure!(frac >= 0.9, "only {:.1}% of the mask lies in the clean half", 100.0 * frac);
    Ok(format!(
        "self vf {:.3}, noise vf {:.3}, half-corrupted {:.1}% in clean half",
        same.valid_fraction,
        noise.valid_fraction,
        100.0 * frac
    ))
}

fn random_disp(w: usize, h: usize, seed: u64) -> DisparityMap {
    let mut r = rng(seed);
    DisparityMap::from_values(w, h, (0..w * h).map(|_| r.random_range(0.2..3.0)).collect()).unwrap()
}

fn c5_losses() -> Outcome {
    let mut r = rng(5);
    let mut inv = 0.0f64;
    for seed in 0..20 {
        let pred = random_disp(16, 16, seed);
        let gt = random_disp(16, 16, seed + 500);
        let (a, b) = (r.random_range(0.1..10.0), r.random_range(0.0..5.0));
        let moved = DisparityMap::from_values(16, 16, pred.values().iter().map(|v| a * v + b).collect()).unwrap();
        let e = |x: depthcur::Result<depthcur::LossResult>| x.map(|l| l.value).map_err(|e| e.to_string());
        inv = inv.max((e(loss_ssi(&pred, &gt, DEFAULT_TRIM))? - e(loss_ssi(&moved, &gt, DEFAULT_TRIM))?).abs());
        inv = inv.max((e(loss_gm(&pred, &gt, DEFAULT_GM_SCALES))? - e(loss_gm(&moved, &gt, DEFAULT_GM_SCALES))?).abs());
    }
    ensure!(inv < 1e-9, "affine invariance violated by {inv:e}");
    let mut parts = vec![format!("invariance {inv:.1e}")];
    for op in ProbeOp::ALL {
        let rep = run_probes(op, 20, 5).map_err(|e| e.to_string())?;
        ensure!(rep.passed(), "{op} gradcheck {:.2e} >= {:.0e}", rep.max_error, rep.tolerance);
        parts.push(format!("{op} {:.1e}", rep.max_error));
    }
    Ok(parts.join(", "))
}

fn c6_trim() -> Outcome {
    let mut r = rng(6);
    for k in 0..100 {
        let (w, h) = (r.random_range(3..24), r.random_range(2..24));
        let pred = random_disp(w, h, 6000 + k);
        let gt = random_disp(w, h, 7000 + k);
        let (res, dropped) = loss_ssi_with_trim_set(&pred, &gt, DEFAULT_TRIM).map_err(|e| e.to_string())?;
        let want = trim_count(w * h, DEFAULT_TRIM);
        let zeros = res.grad.iter().filter(|g| **g == 0.0).count();
        ensure!(dropped.len() == want && zeros == want, "instance {k} ({w}x{h}): {zeros} zero grads, {} dropped, want {want}", dropped.len());
        ensure!(dropped.iter().all(|&i| res.grad[i] == 0.0), "instance {k}: dropped pixel with gradient");
    }
    Ok("ceil(0.1 N) zero-gradient pixels on 100 instances".into())
}

fn c7_eval() -> Outcome {
    let cfg = EvalConfig::default();
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let gt = smooth_depth(20, 16, seed);
        let (a, b) = (r.random_range(0.1..10.0), r.random_range(0.0..3.0));
        let pred = DisparityMap::from_values(20, 16, gt.values().iter().map(|d| a / d + b).collect()).unwrap();
        let m = evaluate_sample("a", &pred, &gt, &cfg).map_err(|e| e.to_string())?;
        ensure!(m.delta1 == 1.0, "affine instance {seed}: delta1 {}", m.delta1);
        worst = worst.max(m.absrel).max(m.rmse);
    }
    ensure!(worst < 1e-9, "affine instances deviate by {worst:e}");
    let mut oracle_gap = 0.0f64;
    for seed in 0..10 {
        let gt = smooth_depth(16, 12, 100 + seed);
        let gamma = 0.5 + 0.1 * seed as f64;
        let pred = DisparityMap::from_values(16, 12, gt.values().iter().map(|d| 3.0 * (1.0 / d).powf(gamma) + 0.2).collect()).unwrap();
        let m = evaluate_sample("d", &pred, &gt, &cfg).map_err(|e| e.to_string())?;
        let o = eval_oracle(&pred, &gt, cfg.min_disparity, cfg.delta_threshold);
        oracle_gap = oracle_gap.max((m.absrel - o.absrel).abs()).max((m.delta1 - o.delta1).abs()).max((m.rmse - o.rmse).abs());
    }
    ensure!(oracle_gap < 1e-3, "grid-search oracle gap {oracle_gap:e}");
    let gt = smooth_depth(16, 12, 3);
    let scaled = |c: f64| DepthMap::from_values(16, 12, gt.values().iter().map(|v| c * v).collect()).unwrap();
    let d12 = depthcur::eval::delta1(&scaled(1.2), &gt, 1.25).map_err(|e| e.to_string())?;
    let d13 = depthcur::eval::delta1(&scaled(1.3), &gt, 1.25).map_err(|e| e.to_string())?;
    ensure!(d12 == 1.0 && d13 == 0.0, "delta1 at 1.2 -> {d12}, 1.3 -> {d13}");
    Ok(format!("affine max {worst:.1e}, oracle gap {oracle_gap:.1e}, delta1 step ok"))
}

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let kinds: Vec<EntryKind> = (0..20)
        .map(|k| match k % 4 {
            1 => EntryKind::Noise,
            _ => EntryKind::SelfPair,
        })
        .collect();
    let manifest = write_fixture(dir.path(), 96, 80, &kinds);
    let mut snaps = Vec::new();
    for workers in [1, 4, 8] {
        let out = dir.path().join(format!("w{workers}"));
        let cfg = PipelineConfig {
            fusion: FusionConfig {
                crop_size: 64,
                ..FusionConfig::default()
            },
            workers,
            global_seed: 99,
            out_dir: out.clone(),
            ..PipelineConfig::default()
        };
        run_pipeline(&manifest, &cfg).map_err(|e| e.to_string())?;
        snaps.push(snapshot(&out));
    }
    ensure!(snaps[0] == snaps[1] && snaps[0] == snaps[2], "outputs differ across worker counts");
    let masks = snaps[0].iter().filter(|(p, _)| p.starts_with("masks")).count();
    ensure!(masks == 15, "expected 15 masks, found {masks}");
    Ok(format!("{} files identical for workers 1, 4, 8", snaps[0].len()))
}

fn c9_reward() -> Outcome {
    let mlp = MlpWeights::random(&[64, 32, 16, 1], 9).map_err(|e| e.to_string())?;
    let rw = RewardWeights::default();
    for seed in 0..20 {
        let gen = smooth_depth(24, 16, seed);
        let src = smooth_depth(24, 16, seed + 300);
        let img = textured_rgb(48, 32, seed);
        let got = rl_total_loss(&gen, &src, &img, &mlp, &rw).map_err(|e| e.to_string())?;
        let a = cosine_depth_loss(&gen, &src).map_err(|e| e.to_string())?.value;
        let (b, _) = aesthetic_score(&toy_embed(&img), &mlp).map_err(|e| e.to_string())?;
        ensure!(got.value == 0.9 * a - 0.1 * b, "fixture {seed}: {} vs {}", got.value, 0.9 * a - 0.1 * b);
    }
    for seed in 0..20 {
        // Single-precision entries keep c·e exactly representable.
        let e: Vec<f64> = toy_embed(&textured_rgb(32, 32, 50 + seed)).0.iter().map(|v| *v as f32 as f64).collect();
        let (s, _) = aesthetic_score(&Embedding(e.clone()), &mlp).map_err(|e| e.to_string())?;
        for c in [0.5, 2.0, 10.0] {
            let (sc, _) = aesthetic_score(&Embedding(e.iter().map(|v| v * c).collect()), &mlp).map_err(|e| e.to_string())?;
            ensure!(sc == s, "score({c}·e) = {sc} != {s}");
        }
    }
    Ok("composition exact on 20 fixtures; scale invariance exact for c in {0.5, 2, 10}".into())
}

fn c10_throughput() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let kinds: Vec<EntryKind> = (0..200)
        .map(|k| if k % 5 == 0 { EntryKind::Noise } else { EntryKind::SelfPair })
        .collect();
    let manifest = write_fixture(dir.path(), 640, 480, &kinds);
    let cfg = PipelineConfig {
        workers: 4,
        out_dir: dir.path().join("out"),
        ..PipelineConfig::default()
    };
    let start = Instant::now();
    let s = run_pipeline(&manifest, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(s.processed == 200 && s.failed == 0, "{s:?}");
    ensure!(elapsed < secs(120), "200 entries took {elapsed:.1?}");
    Ok(format!("200 entries of 640x480 in {elapsed:.1?} on 4 workers"))
}

fn main() {
    // The harness passes flags like --nocapture; none apply here.
    let mut gate = Gate { failed: Vec::new() };
    gate.run(1, "default constants", secs(1), true, c1_constants);
    gate.run(2, "SSIM oracle equivalence", secs(10), true, c2_ssim_oracle);
    gate.run(3, "registration recovery", secs(30), true, c3_registration);
    gate.run(4, "mask-fusion end-to-end", secs(20), true, c4_fusion);
    gate.run(5, "loss invariance and gradients", secs(30), true, c5_losses);
    gate.run(6, "trimming count", secs(5), true, c6_trim);
    gate.run(7, "eval harness exactness", secs(10), true, c7_eval);
    gate.run(8, "pipeline determinism", secs(60), true, c8_determinism);
    gate.run(9, "reward composition", secs(5), true, c9_reward);
    if std::env::var_os("DEPTHCUR_SKIP_THROUGHPUT").is_some() {
        println!("[10] SKIP  throughput (soft, non-gating): DEPTHCUR_SKIP_THROUGHPUT is set");
    } else {
        gate.run(10, "throughput", secs(600), false, c10_throughput);
    }
    if gate.failed.is_empty() {
        println!("acceptance: all gating criteria passed");
    } else {
        println!("acceptance: failed criteria {:?}", gate.failed);
        std::process::exit(1);
    }
}
