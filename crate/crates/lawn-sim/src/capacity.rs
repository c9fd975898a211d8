//! `capacity-sweep`: per-UAV spectral-efficiency curves over a load range
//! and SNR grid, plus the regime boundaries and admissible-load bounds for
//! each SNR point.

use std::fmt::Write as _;
use std::path::Path;

use lawn_core::channel::{
    critical_capacity, per_uav_se_curve, qos_capacity_bound, AllocationPolicy, CurvePoint,
};

use crate::config::SimConfig;
use crate::error::SimError;
use crate::manifest::{ensure_out_dir, RunManifest};

pub const CURVE_FILE: &str = "capacity_curve.csv";
pub const BOUNDARY_FILE: &str = "regime_boundaries.csv";

pub fn run_capacity_sweep(
    config: &SimConfig,
    out_dir: &Path,
    replicates_override: Option<usize>,
) -> Result<RunManifest, SimError> {
    let section = config.capacity()?;
    let beams = config.beams()?;
    let k_range = section.k_range()?;
    let snrs = section.snrs()?;
    let replicates = replicates_override.unwrap_or(section.replicates);
    let policy = section.policy.to_core();

    let points = per_uav_se_curve(
        &k_range,
        beams.count,
        &section.rho_db,
        policy,
        replicates,
        config.seed,
    )
    .map_err(|e| SimError::validation("capacity", e))?;

    ensure_out_dir(out_dir)?;
    write_curve_csv(&points, &out_dir.join(CURVE_FILE))?;
    write_boundary_csv(&snrs, beams.count, &out_dir.join(BOUNDARY_FILE))?;

    let mut manifest = RunManifest::new("capacity-sweep", config.hash(), config.seed);
    manifest.add_file(CURVE_FILE);
    manifest.add_file(BOUNDARY_FILE);
    manifest.add_metric("num_beams", serde_json::json!(beams.count));
    manifest.add_metric("replicates", serde_json::json!(replicates));
    manifest.add_metric("policy", serde_json::json!(policy.to_string()));
    for &(db, snr) in &snrs {
        let bound = qos_capacity_bound(beams.count, snr, section.r_min)
            .map_err(|e| SimError::validation("capacity.r_min", e))?;
        manifest.add_metric(
            &format!("regime_rho_{db}db"),
            serde_json::json!({
                "num_beams": beams.count,
                "rho_db": db,
                "critical_capacity": critical_capacity(beams.count, snr),
                "r_min": section.r_min,
                "qos_max_load": bound.max_load,
                "qos_feasible": bound.feasible,
            }),
        );
    }
    run_checks(&mut manifest, &points, beams.count, policy);
    manifest.write(out_dir)?;
    Ok(manifest)
}

fn write_curve_csv(points: &[CurvePoint], path: &Path) -> Result<(), SimError> {
    let mut csv = String::from("K,rho_db,policy,mean_se_bits,stderr_se_bits,regime\n");
    for p in points {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            p.k_uav, p.rho_db, p.policy, p.mean_se, p.stderr_se, p.regime
        )
        .expect("string write");
    }
    std::fs::write(path, csv).map_err(|e| SimError::runtime(&format!("{}", path.display()), e))
}

fn write_boundary_csv(
    snrs: &[(f64, lawn_core::channel::LinkSnr)],
    num_beams: usize,
    path: &Path,
) -> Result<(), SimError> {
    let mut csv = String::from("rho_db,num_beams,critical_capacity\n");
    for &(db, snr) in snrs {
        writeln!(csv, "{},{},{}", db, num_beams, critical_capacity(num_beams, snr))
            .expect("string write");
    }
    std::fs::write(path, csv).map_err(|e| SimError::runtime(&format!("{}", path.display()), e))
}

/// Self-checks over the sweep output. The balanced policy is deterministic,
/// so its private-beam plateau and monotone decay are exact; the random
/// policy only asserts what sampling guarantees.
fn run_checks(
    manifest: &mut RunManifest,
    points: &[CurvePoint],
    num_beams: usize,
    policy: AllocationPolicy,
) {
    match policy {
        AllocationPolicy::Balanced => {
            let mut plateau_violations = 0usize;
            let mut plateau_rows = 0usize;
            for p in points.iter().filter(|p| p.k_uav >= 1 && p.k_uav <= num_beams) {
                plateau_rows += 1;
                let solo = (1.0 + 10f64.powf(p.rho_db / 10.0)).log2();
                if p.mean_se.to_bits() != solo.to_bits() {
                    plateau_violations += 1;
                }
            }
            manifest.add_check(
                "balanced-plateau-exact",
                plateau_violations == 0,
                format!(
                    "{plateau_rows} rows with K <= {num_beams} checked, {plateau_violations} differ from log2(1+rho)"
                ),
            );

            // Rows are load-major, so points for one SNR sit a stride apart.
            let mut monotone_violations = 0usize;
            let num_snrs = points.iter().filter(|p| p.k_uav == points[0].k_uav).count();
            for lane in 0..num_snrs {
                let column: Vec<&CurvePoint> =
                    points.iter().skip(lane).step_by(num_snrs).collect();
                for pair in column.windows(2) {
                    if pair[1].mean_se > pair[0].mean_se + 1e-12 {
                        monotone_violations += 1;
                    }
                }
            }
            manifest.add_check(
                "balanced-monotone",
                monotone_violations == 0,
                format!("{monotone_violations} increases found along increasing load"),
            );
        }
        AllocationPolicy::UniformRandom => {
            let bad_stderr = points
                .iter()
                .filter(|p| !p.stderr_se.is_finite() || p.stderr_se < 0.0)
                .count();
            manifest.add_check(
                "stderr-finite",
                bad_stderr == 0,
                format!("{bad_stderr} rows with invalid standard error"),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_config(policy: &str) -> SimConfig {
        toml::from_str(&format!(
            r#"
            seed = 11

            [beams]
            count = 4

            [capacity]
            rho_db = [0.0, 10.0]
            k_min = 1
            k_max = 12
            policy = "{policy}"
            replicates = 50
            "#
        ))
        .unwrap()
    }

    #[test]
    fn sweep_writes_artifacts_and_passes_checks() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = run_capacity_sweep(&demo_config("balanced"), dir.path(), None).unwrap();
        assert_eq!(manifest.failed_checks(), 0);
        assert!(dir.path().join(CURVE_FILE).exists());
        assert!(dir.path().join(BOUNDARY_FILE).exists());

        let curve = std::fs::read_to_string(dir.path().join(CURVE_FILE)).unwrap();
        let mut lines = curve.lines();
        assert_eq!(
            lines.next().unwrap(),
            "K,rho_db,policy,mean_se_bits,stderr_se_bits,regime"
        );
        // 12 loads x 2 SNR points.
        assert_eq!(lines.count(), 24);
    }

    #[test]
    fn uniform_policy_reports_sampling_check() {
        let dir = tempfile::tempdir().unwrap();
        let manifest =
            run_capacity_sweep(&demo_config("uniform-random"), dir.path(), Some(20)).unwrap();
        assert_eq!(manifest.failed_checks(), 0);
        assert!(manifest.summary.checks.iter().any(|c| c.name == "stderr-finite"));
    }

    #[test]
    fn missing_section_is_a_validation_error() {
        let config: SimConfig = toml::from_str("seed = 1").unwrap();
        let dir = tempfile::tempdir().unwrap();
        match run_capacity_sweep(&config, dir.path(), None) {
            Err(SimError::Validation(msg)) => assert!(msg.contains("[capacity]")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }
}
