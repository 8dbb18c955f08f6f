#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn siamstereo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siamstereo"))
        .args(args)
        .current_dir(dir)
        .env("SIAMSTEREO_LOG_LEVEL", "warn")
        .env_remove("SIAMSTEREO_THREADS")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[track_caller]
pub fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    out
}

/// Writes `count` synthetic 64x96 pairs with disparities up to 16 under `dir/name`.
pub fn synth(dir: &Path, name: &str, count: usize, seed: u64) -> PathBuf {
    ok(siamstereo(
        dir,
        &[
            "synth",
            "--out",
            name,
            "--count",
            &count.to_string(),
            "--seed",
            &seed.to_string(),
        ],
    ));
    dir.join(name)
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).expect("manifest exists")).expect("valid json")
}
