use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use siamstereo::data_io::{ColorMode, Edition};
use siamstereo::siamese::Preset;
use siamstereo::{CorrMode, ScoreRoute};

/// Every flag can also be set through an environment variable named
/// `SIAMSTEREO_<FLAG>` (upper case, dashes as underscores).
#[derive(Debug, Parser)]
#[command(name = "siamstereo", version, about = "Siamese CNN stereo matching")]
pub struct Cli {
    /// Worker threads (1 gives bitwise-reproducible runs).
    #[arg(long, global = true, env = "SIAMSTEREO_THREADS")]
    pub threads: Option<usize>,

    /// Where to write the run manifest (overrides the per-command default).
    #[arg(long, global = true, env = "SIAMSTEREO_MANIFEST")]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "command")]
pub enum Command {
    /// Train a network on a KITTI-layout dataset.
    Train(TrainArgs),
    /// Compute the disparity map of one image pair.
    Infer(InferArgs),
    /// Score predicted disparity maps against ground truth.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset in the KITTI 2012 layout.
    Synth(SynthArgs),
    /// Repeat the run recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset root (containing `training/` or the image directories directly).
    #[arg(long, env = "SIAMSTEREO_DATA")]
    pub data: PathBuf,
    #[arg(long, default_value = "2012", env = "SIAMSTEREO_EDITION")]
    pub edition: Edition,
    #[arg(long, default_value = "gray", env = "SIAMSTEREO_COLOR")]
    pub color: ColorMode,
    #[arg(long, env = "SIAMSTEREO_ARCH")]
    pub arch: Preset,
    #[arg(long, env = "SIAMSTEREO_CORR")]
    pub corr: CorrMode,
    #[arg(long, env = "SIAMSTEREO_MAX_DISP")]
    pub max_disp: usize,
    /// Checkpoint path.
    #[arg(long, env = "SIAMSTEREO_OUT")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 75_000, env = "SIAMSTEREO_ITERS")]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-3, env = "SIAMSTEREO_LR")]
    pub lr: f64,
    /// Multiply the learning rate by 0.1 for the last 20% of iterations.
    #[arg(long, env = "SIAMSTEREO_LR_DECAY")]
    pub lr_decay: bool,
    /// Patches per batch [default: depends on --arch and --corr].
    #[arg(long, env = "SIAMSTEREO_BATCH")]
    pub batch: Option<usize>,
    /// Patch side [default: 10, 28 or 56 for s4, s7, s9].
    #[arg(long, env = "SIAMSTEREO_PATCH")]
    pub patch: Option<usize>,
    #[arg(long, default_value_t = 64, env = "SIAMSTEREO_THETA")]
    pub theta: usize,
    #[arg(long, default_value_t = 0, env = "SIAMSTEREO_SEED")]
    pub seed: u64,
    /// Train on every frame instead of the edition's training split.
    #[arg(long, env = "SIAMSTEREO_ALL_FRAMES")]
    pub all_frames: bool,
    /// Seed of the train/validation split [default: --seed].
    #[arg(long, env = "SIAMSTEREO_SPLIT_SEED")]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = 100, env = "SIAMSTEREO_LOG_EVERY")]
    pub log_every: usize,
    /// Training log path [default: <out>.log.csv].
    #[arg(long, env = "SIAMSTEREO_LOG")]
    pub log: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct InferArgs {
    #[arg(long, env = "SIAMSTEREO_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "SIAMSTEREO_LEFT")]
    pub left: PathBuf,
    #[arg(long, env = "SIAMSTEREO_RIGHT")]
    pub right: PathBuf,
    #[arg(long, env = "SIAMSTEREO_MAX_DISP")]
    pub max_disp: usize,
    /// Disparity PNG path.
    #[arg(long, env = "SIAMSTEREO_OUT")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8, env = "SIAMSTEREO_BAND_ROWS")]
    pub band_rows: usize,
    /// Learned-head evaluation strategy (psi materializes the paired feature space).
    #[arg(long, default_value = "factored", env = "SIAMSTEREO_ROUTE")]
    pub route: ScoreRoute,
    /// Also write the raw cost volume here.
    #[arg(long, env = "SIAMSTEREO_DUMP_VOLUME")]
    pub dump_volume: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Directory of predicted disparity PNGs.
    #[arg(long, env = "SIAMSTEREO_PRED")]
    pub pred: PathBuf,
    /// Directory of ground-truth disparity PNGs (all valid pixels).
    #[arg(long, env = "SIAMSTEREO_GT")]
    pub gt: PathBuf,
    /// Ground truth restricted to non-occluded pixels, same file names.
    #[arg(long, env = "SIAMSTEREO_NOC_MASKS")]
    pub noc_masks: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2,3,5", env = "SIAMSTEREO_THRESHOLDS")]
    pub thresholds: Vec<f32>,
    /// Write `image,threshold,subset,error_pct,px_count` records here.
    #[arg(long, env = "SIAMSTEREO_RECORDS")]
    pub records: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    /// `all`, or a comma-separated list of check names.
    #[arg(long, default_value = "all", env = "SIAMSTEREO_OPS")]
    pub ops: String,
    #[arg(long, default_value_t = 0, env = "SIAMSTEREO_SEED")]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5, env = "SIAMSTEREO_EPS")]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4, env = "SIAMSTEREO_TOL")]
    pub tol: f64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Dataset root; frames go to `<out>/training`.
    #[arg(long, env = "SIAMSTEREO_OUT")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20, env = "SIAMSTEREO_COUNT")]
    pub count: usize,
    #[arg(long, default_value_t = 16, env = "SIAMSTEREO_MAX_DISP")]
    pub max_disp: usize,
    /// Image size as `ROWSxCOLS`.
    #[arg(long, default_value = "64x96", value_parser = parse_size, env = "SIAMSTEREO_SIZE")]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 0, env = "SIAMSTEREO_SEED")]
    pub seed: u64,
    #[arg(long, default_value_t = 2, env = "SIAMSTEREO_OCCLUDERS")]
    pub occluders: usize,
    /// Constant-intensity vertical bands in the background.
    #[arg(long, default_value_t = 0, env = "SIAMSTEREO_BANDS")]
    pub bands: usize,
    /// Band width range as `MIN-MAX`.
    #[arg(long, default_value = "12-24", value_parser = parse_range, env = "SIAMSTEREO_BAND_WIDTH")]
    pub band_width: (usize, usize),
    #[arg(long, default_value_t = 2, env = "SIAMSTEREO_BLUR")]
    pub blur: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// Manifest written by an earlier run.
    #[arg(long = "from", env = "SIAMSTEREO_FROM")]
    pub from: PathBuf,
    /// Replace the run's primary output path.
    #[arg(long, env = "SIAMSTEREO_OUT")]
    pub out: Option<PathBuf>,
}

fn parse_pair(s: &str, sep: char, what: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(sep)
        .ok_or_else(|| format!("expected {what} as `A{sep}B`, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{what} `{s}`: {e}"));
    Ok((num(a)?, num(b)?))
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    parse_pair(&s.to_ascii_lowercase(), 'x', "size")
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    parse_pair(s, '-', "range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn size_and_range_parsing() {
        assert_eq!(parse_size("64x96"), Ok((64, 96)));
        assert_eq!(parse_size("64X96"), Ok((64, 96)));
        assert!(parse_size("64").is_err());
        assert_eq!(parse_range("9-30"), Ok((9, 30)));
        assert!(parse_range("a-3").is_err());
    }
}
