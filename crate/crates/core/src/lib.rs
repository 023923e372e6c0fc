//! Curation of depth supervision for generated images, depth training
//! losses, and affine-invariant depth evaluation.

pub mod error;
pub mod eval;
pub mod fusion;
pub mod io;
mod jsonl;
pub mod losses;
pub mod orb;
pub mod pipeline;
pub mod raster;
pub mod registration;
pub mod ssim;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{evaluate_sample, EvalConfig, Report, SampleMetrics};
pub use fusion::{build_fusion_mask, FusionConfig, FusionOutcome, SquareKernel};
pub use losses::{LossResult, MlpWeights, RewardWeights};
pub use pipeline::{run_pipeline, CurationRecord, ManifestEntry, PipelineConfig, Stage, Summary};
pub use raster::{BinaryMask, DepthMap, DisparityMap, GrayImage, Rect, RgbImage};
pub use registration::{AffineTransform, RegistrationParams, RegistrationResult};
pub use ssim::{ssim_map, SsimMap, SsimParams};
