use anyhow::Context;
use serde_json::json;
use siamstereo::inference::evaluate_dirs;

use super::Exit;
use crate::args::EvalArgs;
use crate::manifest::RunManifest;

pub fn run(a: &EvalArgs, manifest: &mut RunManifest) -> anyhow::Result<()> {
    if a.thresholds.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Exit::usage("thresholds must be non-negative numbers").into());
    }
    let out = evaluate_dirs(&a.pred, &a.gt, a.noc_masks.as_deref(), &a.thresholds)?;
    print!("{}", out.report.to_table());
    if let Some(path) = &a.records {
        super::ensure_parent(path)?;
        std::fs::write(path, out.report.to_records()).with_context(|| format!("writing {}", path.display()))?;
        manifest.outputs.insert("records".into(), path.clone());
    }
    manifest.details = json!({ "images": out.report.images, "missing": out.missing });
    if !out.missing.is_empty() {
        for name in &out.missing {
            eprintln!("unpaired: {name}");
        }
        return Err(Exit::mismatch(format!(
            "{} file(s) without a counterpart were excluded",
            out.missing.len()
        ))
        .into());
    }
    Ok(())
}
