mod eval;
mod gradcheck;
mod infer;
mod synth;
mod train;

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;

use siamstereo::training::TrainConfig;
use siamstereo::Error;

use crate::args::Command;
use crate::manifest::{sibling, RunManifest};

pub const USAGE: u8 = 2;
pub const NUMERIC: u8 = 3;
pub const MISMATCH: u8 = 4;

/// Failure with a chosen exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub message: String,
}

impl Exit {
    pub fn usage(m: impl Into<String>) -> Self {
        Exit {
            code: USAGE,
            message: m.into(),
        }
    }

    pub fn numeric(m: impl Into<String>) -> Self {
        Exit {
            code: NUMERIC,
            message: m.into(),
        }
    }

    pub fn mismatch(m: impl Into<String>) -> Self {
        Exit {
            code: MISMATCH,
            message: m.into(),
        }
    }
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

pub fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(x) = cause.downcast_ref::<Exit>() {
            return x.code;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::DisparityTooLarge { .. } => USAGE,
                Error::NonFinite { .. } | Error::NoGroundTruth => NUMERIC,
                Error::Shape { .. }
                | Error::Format(_)
                | Error::Image { .. }
                | Error::Io { .. }
                | Error::UninitializedMoments(_)
                | Error::EncodeRange(_) => MISMATCH,
                _ => 1,
            };
        }
    }
    1
}

pub fn set_primary_output(command: &mut Command, out: PathBuf) {
    match command {
        Command::Train(a) => {
            a.out = out;
            a.log = None;
        }
        Command::Infer(a) => a.out = out,
        Command::Synth(a) => a.out = out,
        Command::Eval(a) => a.records = Some(out),
        Command::Gradcheck(_) | Command::Rerun(_) => {}
    }
}

/// Materializes every default that depends on other flags.
pub fn fill_defaults(command: &mut Command) {
    if let Command::Train(a) = command {
        a.batch.get_or_insert(TrainConfig::default_batch(a.arch, a.corr));
        a.patch.get_or_insert(a.arch.patch_size());
        a.split_seed.get_or_insert(a.seed);
        if a.log.is_none() {
            a.log = Some(sibling(&a.out, "log.csv"));
        }
    }
}

pub fn execute(command: &Command, manifest: &mut RunManifest) -> anyhow::Result<()> {
    match command {
        Command::Train(a) => train::run(a, manifest),
        Command::Infer(a) => infer::run(a, manifest),
        Command::Eval(a) => eval::run(a, manifest),
        Command::Gradcheck(a) => gradcheck::run(a, manifest),
        Command::Synth(a) => synth::run(a, manifest),
        Command::Rerun(_) => unreachable!("rerun is resolved before execution"),
    }
}

/// Creates the parent directory of an output file if needed.
pub fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}
