//! `report`: audits a finished run. Reads the manifest, verifies every
//! listed artifact exists and is non-empty, echoes the summary metrics and
//! tables, and prints one PASS/FAIL line per recorded check.

use std::io::Write;
use std::path::Path;

use crate::error::SimError;
use crate::manifest::RunManifest;

pub fn run_report(out_dir: &Path) -> Result<(), SimError> {
    let manifest = RunManifest::read(out_dir)?;
    for name in &manifest.files {
        let path = out_dir.join(name);
        let meta = std::fs::metadata(&path)
            .map_err(|e| SimError::runtime(&format!("artifact {}", path.display()), e))?;
        if meta.len() == 0 {
            return Err(SimError::Runtime(format!(
                "artifact {}: file is empty",
                path.display()
            )));
        }
    }

    match write_report(&manifest, out_dir, std::io::stdout().lock()) {
        Ok(()) => {}
        // A consumer like `head` closing the pipe is not a failure; the
        // exit code still reflects the checks.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
        Err(e) => return Err(SimError::runtime("report output", e)),
    }

    let failed = manifest.failed_checks();
    if failed > 0 {
        return Err(SimError::ChecksFailed(failed));
    }
    Ok(())
}

fn write_report<W: Write>(
    manifest: &RunManifest,
    out_dir: &Path,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(
        out,
        "run: {} (seed {}, config {})",
        manifest.command, manifest.seed, manifest.config_hash
    )?;
    writeln!(out, "artifacts: {} files verified", manifest.files.len())?;
    for (name, value) in &manifest.summary.metrics {
        writeln!(out, "metric {name} = {value}")?;
    }
    // Summary tables small enough to read inline are echoed verbatim.
    for name in ["regime_boundaries.csv", "survival.csv", "occupancy.csv"] {
        if manifest.files.iter().any(|f| f == name) {
            let text = std::fs::read_to_string(out_dir.join(name))?;
            writeln!(out, "{name}:")?;
            for line in text.lines() {
                writeln!(out, "  {line}")?;
            }
        }
    }
    for check in &manifest.summary.checks {
        let status = if check.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status} {}: {}", check.name, check.detail)?;
    }
    Ok(())
}
