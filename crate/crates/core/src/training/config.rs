use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CorrMode;
use crate::siamese::{ArchSpec, InitConfig, Preset};

/// Fully resolved training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: Preset,
    pub theta: usize,
    pub corr: CorrMode,
    pub max_disp: usize,
    pub patch: usize,
    pub batch: usize,
    pub iterations: usize,
    pub lr: f64,
    /// Multiply the learning rate by 0.1 for the last 20% of iterations.
    pub lr_decay: bool,
    pub seed: u64,
    pub init: InitConfig,
    /// Iterations per log record.
    pub log_every: usize,
    /// Patch positions tried per image before giving up on it.
    pub max_retries: usize,
}

impl TrainConfig {
    pub const DEFAULT_ITERATIONS: usize = 75_000;
    pub const DEFAULT_LR: f64 = 1e-3;

    /// Defaults for a preset and correlation mode.
    pub fn new(preset: Preset, corr: CorrMode, max_disp: usize) -> Self {
        TrainConfig {
            preset,
            theta: ArchSpec::DEFAULT_THETA,
            corr,
            max_disp,
            patch: preset.patch_size(),
            batch: Self::default_batch(preset, corr),
            iterations: Self::DEFAULT_ITERATIONS,
            lr: Self::DEFAULT_LR,
            lr_decay: false,
            seed: 0,
            init: InitConfig::default(),
            log_every: 100,
            max_retries: 20,
        }
    }

    pub fn default_batch(preset: Preset, corr: CorrMode) -> usize {
        match (corr, preset) {
            (CorrMode::Inner, Preset::S4) => 128,
            (CorrMode::Inner, Preset::S7) => 32,
            (CorrMode::Inner, Preset::S9) => 20,
            (CorrMode::Learned, Preset::S4) => 128,
            (CorrMode::Learned, Preset::S7) => 20,
            (CorrMode::Learned, Preset::S9) => 8,
        }
    }

    pub fn arch(&self, in_channels: usize) -> ArchSpec {
        ArchSpec::preset(self.preset)
            .with_theta(self.theta)
            .with_in_channels(in_channels)
    }

    /// Learning rate in effect at 1-based iteration `iter`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        if self.lr_decay && iter * 5 > self.iterations * 4 {
            self.lr * 0.1
        } else {
            self.lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch(1).validate()?;
        self.arch(1).check_patch_size(self.patch)?;
        if self.max_disp == 0 {
            return Err(Error::Config("max disparity must be at least 1".into()));
        }
        if self.batch == 0 || self.iterations == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "batch, iterations and log interval must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            )));
        }
        Ok(())
    }
}
