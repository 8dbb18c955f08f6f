use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::loss::batch_loss;
use super::patch::sample_patch;
use crate::data_io::StereoSample;
use crate::error::{Error, Result};
use crate::model::StereoModel;
use crate::ops::{adam_step, AdamConfig, AdamState};
use crate::rng::{stream, Stream};

/// One line of the training log: mean loss over the iterations since the
/// previous record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub loss: f64,
    pub elapsed_s: f64,
}

impl LogRecord {
    pub const HEADER: &'static str = "iter,loss,elapsed_s";

    pub fn to_line(&self) -> String {
        format!("{},{:.6},{:.3}", self.iter, self.loss, self.elapsed_s)
    }
}

pub struct TrainOutcome {
    pub model: StereoModel<f32>,
    pub log: Vec<LogRecord>,
    /// Patch draws abandoned because no labeled pixel was found.
    pub skipped: usize,
}

/// Runs `cfg.iterations` Adam steps on randomly drawn patches.
///
/// Every patch picks a training image uniformly, then a position within it.
/// The result depends only on `cfg` and `samples` when run on one thread.
pub fn train(cfg: &TrainConfig, samples: &[StereoSample], mut on_log: impl FnMut(&LogRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labeled: Vec<&StereoSample> = samples.iter().filter(|s| s.gt.is_some()).collect();
    let first = labeled
        .first()
        .ok_or_else(|| Error::Config("no training samples with ground truth".into()))?;
    let channels = first.left.shape().channels;
    if let Some(s) = labeled.iter().find(|s| s.left.shape().channels != channels) {
        return Err(Error::Config(format!(
            "{}: channel count differs from the first sample",
            s.id
        )));
    }
    let mut model = StereoModel::<f32>::build(&cfg.arch(channels), cfg.corr, cfg.init, cfg.seed)?;
    let mut states: Vec<AdamState<f32>> = model
        .params()
        .iter()
        .map(|(_, p)| AdamState::new(p.shape().len()))
        .collect();
    let mut rng = stream(cfg.seed, Stream::Sampling);
    let start = Instant::now();
    let mut log = Vec::new();
    let (mut window_loss, mut window_len, mut skipped) = (0.0f64, 0usize, 0usize);
    let max_draws = cfg.batch * 50;

    for iter in 1..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch);
        let mut draws = 0;
        while batch.len() < cfg.batch {
            draws += 1;
            if draws > max_draws {
                return Err(Error::NoLabels);
            }
            let s = labeled[rng.random_range(0..labeled.len())];
            match sample_patch(s, cfg.patch, cfg.max_disp, model.context(), cfg.max_retries, &mut rng)? {
                Some(p) => batch.push(p),
                None => skipped += 1,
            }
        }
        model.zero_grad();
        let loss = batch_loss(&mut model, &batch, true)?.loss as f64;
        let lr = cfg.lr_at(iter);
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                iteration: iter,
                lr,
                batch: iter - 1,
            });
        }
        let adam = AdamConfig {
            lr,
            ..AdamConfig::default()
        };
        for (p, st) in model.params_mut().into_iter().zip(states.iter_mut()) {
            let (value, grad) = p.value_and_grad_mut();
            adam_step(value, grad, st, &adam);
        }
        window_loss += loss;
        window_len += 1;
        if iter % cfg.log_every == 0 || iter == cfg.iterations {
            let rec = LogRecord {
                iter,
                loss: window_loss / window_len as f64,
                elapsed_s: start.elapsed().as_secs_f64(),
            };
            on_log(&rec);
            log.push(rec);
            window_loss = 0.0;
            window_len = 0;
        }
    }
    model.zero_grad();
    Ok(TrainOutcome { model, log, skipped })
}
