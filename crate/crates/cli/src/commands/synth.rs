use log::info;
use serde_json::json;
use siamstereo::data_io::{synth_generate, write_dataset, SynthConfig};

use crate::args::SynthArgs;
use crate::manifest::RunManifest;

pub fn run(a: &SynthArgs, manifest: &mut RunManifest) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        count: a.count,
        rows: a.size.0,
        cols: a.size.1,
        max_disp: a.max_disp,
        blur_radius: a.blur,
        occluders: a.occluders,
        bands: a.bands,
        band_width: a.band_width,
        ..SynthConfig::default()
    };
    let samples = synth_generate(&cfg, a.seed)?;
    write_dataset(&a.out, &samples)?;
    info!(
        "wrote {} pairs under {}",
        samples.len(),
        a.out.join("training").display()
    );
    manifest.outputs.insert("dataset".into(), a.out.clone());
    manifest.details = json!({ "synth_config": cfg });
    Ok(())
}
