use log::info;
use serde_json::json;
use siamstereo::checkpoint;
use siamstereo::data_io::{load_image, normalize, write_disparity_png, ColorMode};
use siamstereo::inference::{infer, InferConfig};

use super::Exit;
use crate::args::InferArgs;
use crate::manifest::RunManifest;
use crate::volume;

pub fn run(a: &InferArgs, manifest: &mut RunManifest) -> anyhow::Result<()> {
    let model = checkpoint::load(&a.model)?;
    let color = match model.arch().in_channels {
        1 => ColorMode::Gray,
        3 => ColorMode::Rgb,
        c => return Err(Exit::mismatch(format!("{}: model expects {c} input channels", a.model.display())).into()),
    };
    let left = normalize(&load_image(&a.left, color)?);
    let right = normalize(&load_image(&a.right, color)?);
    let cfg = InferConfig {
        max_disp: a.max_disp,
        band_rows: a.band_rows,
        route: a.route,
        keep_volume: a.dump_volume.is_some(),
    };
    let out = infer(&model, &left, &right, &cfg)?;
    super::ensure_parent(&a.out)?;
    write_disparity_png(&out.disparity, &a.out)?;
    info!("wrote {}", a.out.display());
    manifest.outputs.insert("disparity".into(), a.out.clone());
    if let (Some(path), Some(v)) = (&a.dump_volume, &out.volume) {
        super::ensure_parent(path)?;
        volume::write(v, path)?;
        manifest.outputs.insert("volume".into(), path.clone());
    }
    manifest.details = json!({
        "arch": model.arch(),
        "corr": model.mode(),
        "rows": out.disparity.rows,
        "cols": out.disparity.cols,
    });
    Ok(())
}
