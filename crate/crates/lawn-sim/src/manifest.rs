//! Run manifest: a JSON record of what a command produced, the self-checks
//! it ran, and summary metrics. Every command writes one next to its CSV
//! artifacts so `report` can audit the run later.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Metrics;
use crate::error::SimError;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// One self-check the command ran over its own outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub checks: Vec<Check>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand that produced the run.
    pub command: String,
    /// SHA-256 of the config with `out_dir` cleared.
    pub config_hash: String,
    pub seed: u64,
    /// Artifact files the run wrote, relative to the manifest's directory.
    pub files: Vec<String>,
    pub summary: RunSummary,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash,
            seed,
            files: Vec::new(),
            summary: RunSummary::default(),
        }
    }

    pub fn add_file(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    pub fn add_check(&mut self, name: &str, passed: bool, detail: String) {
        self.summary.checks.push(Check::new(name, passed, detail));
    }

    pub fn add_metric(&mut self, name: &str, value: serde_json::Value) {
        self.summary.metrics.insert(name.to_string(), value);
    }

    pub fn failed_checks(&self) -> usize {
        self.summary.checks.iter().filter(|c| !c.passed).count()
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), SimError> {
        let path = out_dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| SimError::runtime("manifest", e))?;
        std::fs::write(&path, json + "\n")
            .map_err(|e| SimError::runtime(&format!("manifest {}", path.display()), e))
    }

    pub fn read(out_dir: &Path) -> Result<Self, SimError> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| SimError::runtime(&format!("manifest {}", path.display()), e))?;
        serde_json::from_str(&text)
            .map_err(|e| SimError::runtime(&format!("manifest {}", path.display()), e))
    }
}

/// Creates the output directory and returns it, erroring on a path that
/// exists but is not a directory.
pub fn ensure_out_dir(out_dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| SimError::runtime(&format!("out dir {}", out_dir.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = RunManifest::new("capacity-sweep", "abc123".into(), 42);
        manifest.add_file("capacity_curve.csv");
        manifest.add_check("plateau", true, "16 rows exact".into());
        manifest.add_metric("num_beams", serde_json::json!(16));
        manifest.write(dir.path()).unwrap();

        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back.command, "capacity-sweep");
        assert_eq!(back.files, vec!["capacity_curve.csv"]);
        assert_eq!(back.summary.checks.len(), 1);
        assert_eq!(back.failed_checks(), 0);
        assert_eq!(back.summary.metrics["num_beams"], serde_json::json!(16));
    }

    #[test]
    fn failed_checks_counts_only_failures() {
        let mut manifest = RunManifest::new("report", "h".into(), 0);
        manifest.add_check("a", true, String::new());
        manifest.add_check("b", false, "boom".into());
        manifest.add_check("c", false, "boom".into());
        assert_eq!(manifest.failed_checks(), 2);
    }
}
