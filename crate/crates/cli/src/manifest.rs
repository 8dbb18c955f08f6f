use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::args::Command;

/// Record of one run: the fully resolved command (every default filled in)
/// plus timing and output paths. Feeding it to `rerun` repeats the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub command: Command,
    pub outputs: BTreeMap<String, PathBuf>,
    /// Command-specific details (training split, resolved model config, ...).
    #[serde(default)]
    pub details: serde_json::Value,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: Command, threads: Option<usize>, started: f64) -> Self {
        let seed = match &command {
            Command::Train(a) => Some(a.seed),
            Command::Gradcheck(a) => Some(a.seed),
            Command::Synth(a) => Some(a.seed),
            _ => None,
        };
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads,
            seed,
            started_unix_s: started,
            finished_unix_s: started,
            command,
            outputs: BTreeMap::new(),
            details: serde_json::Value::Null,
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// `<path>.<suffix>`, keeping the original extension in the name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
