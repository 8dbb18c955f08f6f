use serde_json::json;
use siamstereo::gradcheck::{all_cases, build_case, check_case_with, MUTANT_CASE};

use super::Exit;
use crate::args::GradcheckArgs;
use crate::manifest::RunManifest;

pub fn run(a: &GradcheckArgs, manifest: &mut RunManifest) -> anyhow::Result<()> {
    let known = all_cases();
    let names: Vec<&str> = if a.ops == "all" {
        known.clone()
    } else {
        a.ops.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
    };
    if let Some(bad) = names.iter().find(|n| !known.contains(n) && **n != MUTANT_CASE) {
        return Err(Exit::usage(format!("unknown check `{bad}`; available: all, {}", known.join(", "))).into());
    }
    if names.is_empty() {
        return Err(Exit::usage("no checks selected").into());
    }
    println!(
        "{:<18} {:>12} {:>8} {:>8} {:>8}  result",
        "check", "max_rel_err", "coords", "refined", "time_s"
    );
    let mut results = Vec::new();
    for name in names {
        let r = check_case_with(name, build_case(name, a.seed)?.as_mut(), a.eps, a.tol)?;
        let verdict = if r.passed(a.tol) { "ok" } else { "FAIL" };
        println!(
            "{:<18} {:>12.3e} {:>8} {:>8} {:>8.2}  {verdict} (worst at {})",
            r.name, r.max_rel_err, r.coords, r.refined, r.seconds, r.worst_at
        );
        results.push(r);
    }
    let worst = results
        .iter()
        .max_by(|x, y| x.max_rel_err.total_cmp(&y.max_rel_err))
        .expect("at least one check");
    println!("worst: {} {:.3e} at {}", worst.name, worst.max_rel_err, worst.worst_at);
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed(a.tol))
        .map(|r| r.name.as_str())
        .collect();
    manifest.details = json!({ "results": results });
    if !failed.is_empty() {
        return Err(Exit::numeric(format!("gradient check failed for: {}", failed.join(", "))).into());
    }
    Ok(())
}
