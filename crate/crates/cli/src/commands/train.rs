use std::fs::File;
use std::io::{BufWriter, Write};

use anyhow::Context;
use log::info;
use serde_json::json;
use siamstereo::checkpoint;
use siamstereo::data_io::{load_kitti, split_ids};
use siamstereo::training::{train, LogRecord, TrainConfig};

use crate::args::TrainArgs;
use crate::manifest::RunManifest;

pub fn run(a: &TrainArgs, manifest: &mut RunManifest) -> anyhow::Result<()> {
    let mut cfg = TrainConfig::new(a.arch, a.corr, a.max_disp);
    cfg.theta = a.theta;
    cfg.iterations = a.iters;
    cfg.lr = a.lr;
    cfg.lr_decay = a.lr_decay;
    cfg.seed = a.seed;
    cfg.log_every = a.log_every;
    cfg.batch = a.batch.unwrap_or(cfg.batch);
    cfg.patch = a.patch.unwrap_or(cfg.patch);
    cfg.validate()?;

    let samples = load_kitti(&a.data, a.edition, a.color)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let n_train = if a.all_frames {
        ids.len()
    } else {
        a.edition.train_count(ids.len())
    };
    let split = split_ids(&ids, n_train, a.split_seed.unwrap_or(a.seed))?;
    let train_set: Vec<_> = samples
        .into_iter()
        .filter(|s| split.train.binary_search(&s.id).is_ok())
        .collect();
    info!(
        "training {} {} on {} of {} frames, {} iterations, batch {}, patch {}",
        cfg.preset,
        cfg.corr,
        train_set.len(),
        ids.len(),
        cfg.iterations,
        cfg.batch,
        cfg.patch
    );

    let log_path = a.log.clone().expect("log path filled in before execution");
    super::ensure_parent(&log_path)?;
    super::ensure_parent(&a.out)?;
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    writeln!(log, "{}", LogRecord::HEADER)?;
    let mut io_error = None;
    let outcome = train(&cfg, &train_set, |r| {
        info!("iter {} loss {:.5} ({:.1}s)", r.iter, r.loss, r.elapsed_s);
        if let Err(e) = writeln!(log, "{}", r.to_line()).and_then(|_| log.flush()) {
            io_error.get_or_insert(e);
        }
    });
    log.flush()?;
    if let Some(e) = io_error {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    let outcome = outcome?;
    checkpoint::save(&outcome.model, &a.out)?;
    info!("wrote {}", a.out.display());

    manifest.outputs.insert("checkpoint".into(), a.out.clone());
    manifest.outputs.insert("log".into(), log_path);
    manifest.details = json!({
        "train_config": cfg,
        "split": split,
        "skipped_patch_draws": outcome.skipped,
        "final_loss": outcome.log.last().map(|r| r.loss),
    });
    Ok(())
}
