//! `siamstereo` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure
//! (non-finite training loss, failed gradient check), 4 model or file format
//! mismatch (including unpaired files in `eval`), 1 anything else.

mod args;
mod commands;
mod manifest;
mod volume;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::error;

use args::{Cli, Command};
use commands::{classify, Exit};
use manifest::{now_unix, sibling, RunManifest};

/// Resolves the command to run (following `rerun`) with all defaults filled in.
fn resolve(cli: &Cli) -> anyhow::Result<(Command, Option<usize>)> {
    let (mut command, threads) = match &cli.command {
        Command::Rerun(r) => {
            let m = RunManifest::read(&r.from).map_err(|e| Exit::mismatch(format!("{e:#}")))?;
            let mut command = m.command;
            if let Some(out) = &r.out {
                commands::set_primary_output(&mut command, out.clone());
            }
            (command, cli.threads.or(m.threads))
        }
        other => (other.clone(), cli.threads),
    };
    commands::fill_defaults(&mut command);
    Ok((command, threads))
}

fn default_manifest(command: &Command) -> Option<PathBuf> {
    match command {
        Command::Train(a) => Some(sibling(&a.out, "manifest.json")),
        Command::Infer(a) => Some(sibling(&a.out, "manifest.json")),
        Command::Synth(a) => Some(a.out.join("manifest.json")),
        Command::Eval(_) | Command::Gradcheck(_) | Command::Rerun(_) => None,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (command, threads) = resolve(&cli)?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(Exit::usage("--threads must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let manifest_path = cli.manifest.clone().or_else(|| default_manifest(&command));
    let mut manifest = RunManifest::new(command.clone(), threads, now_unix());
    let result = commands::execute(&command, &mut manifest);
    manifest.finished_unix_s = now_unix();
    if let Err(e) = &result {
        manifest.details["error"] = serde_json::Value::String(describe(e));
    }
    if let Some(path) = manifest_path {
        // a failed run whose output directory never existed has nowhere to put it
        let dir_ok = path.parent().is_none_or(|p| p.as_os_str().is_empty() || p.is_dir());
        if result.is_ok() || dir_ok {
            manifest.write(&path)?;
        }
    }
    result
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        prev = msg;
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIAMSTEREO_LOG_LEVEL", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{}", describe(&e));
            ExitCode::from(classify(&e))
        }
    }
}
