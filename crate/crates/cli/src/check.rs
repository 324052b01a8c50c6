//! `--check`: the built-in acceptance suite plus a reproducibility check of
//! the command's own CSV output.
//!
//! Writes `acceptance.csv` (`id,name,passed,measured,threshold,detail`) and
//! prints one line per criterion.

use std::path::Path;

use matmuon::acceptance::{self, CriterionResult, CRITERIA};

use crate::commands::{execute, Command};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{write_atomic, Csv};

/// Re-runs `cmd` into a scratch directory and compares every CSV in `files`
/// byte for byte against the copy in `out`.
pub fn reproducibility(cmd: Command, cfg: &ExperimentConfig, out: &Path, files: &[String]) -> Result<CriterionResult> {
    let scratch = tempfile::tempdir().map_err(|e| CliError::io(std::env::temp_dir(), e))?;
    let rerun = execute(cmd, cfg, scratch.path())?;
    let mut mismatched = Vec::new();
    if rerun != files {
        mismatched.push("file list".to_string());
    }
    for name in files {
        let a = std::fs::read(out.join(name)).map_err(|e| CliError::io(out.join(name), e))?;
        let b = std::fs::read(scratch.path().join(name)).unwrap_or_default();
        if a != b {
            mismatched.push(name.clone());
        }
    }
    Ok(CriterionResult {
        id: CRITERIA + 1,
        name: "reproducibility".into(),
        passed: mismatched.is_empty(),
        measured: mismatched.len() as f64,
        threshold: 0.0,
        detail: if mismatched.is_empty() {
            format!("{} csv files identical on rerun", files.len())
        } else {
            format!("differs: {}", mismatched.join(" "))
        },
    })
}

fn sanitize(s: &str) -> String {
    s.replace([',', '\n'], ";")
}

pub fn report_csv(results: &[CriterionResult]) -> Csv {
    let mut csv = Csv::new(&["id", "name", "passed", "measured", "threshold", "detail"]);
    for r in results {
        csv.row(&[&r.id, &r.name, &r.passed, &r.measured, &r.threshold, &sanitize(&r.detail)]);
    }
    csv
}

pub fn report_line(r: &CriterionResult) -> String {
    format!(
        "[{}] {:>2} {:<24} measured={} threshold={} {}",
        if r.passed { "PASS" } else { "FAIL" },
        r.id,
        r.name,
        r.measured,
        r.threshold,
        r.detail
    )
}

/// Runs the full check after `cmd` has written `files` into `out`.
pub fn run_check(cmd: Command, cfg: &ExperimentConfig, out: &Path, files: &[String]) -> Result<()> {
    let mut results = acceptance::run_all();
    results.push(reproducibility(cmd, cfg, out, files)?);
    write_atomic(out, "acceptance.csv", report_csv(&results).as_str().as_bytes())?;
    for r in &results {
        println!("{}", report_line(r));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::CheckFailed(failed));
    }
    Ok(())
}
