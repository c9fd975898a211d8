//! `control-sim`: closed-loop survival study over a grid of link SINR
//! operating points, optionally with the minimum-power beam designed per
//! point instead of a fixed link assumption.

use std::fmt::Write as _;
use std::path::Path;

use lawn_core::beamforming::{solve_p1, write_scan_csv, P1Problem, SolveOutcome};
use lawn_core::control::{
    critical_sinr, simulate_closed_loop, topological_entropy, BeamSchedule, SimulationOptions,
    StepCondition, TrajectoryStats,
};

use crate::config::{db_to_linear, SimConfig};
use crate::error::SimError;
use crate::manifest::{ensure_out_dir, RunManifest};

pub const SURVIVAL_FILE: &str = "survival.csv";

pub fn trajectory_file(point: usize) -> String {
    format!("trajectory_p{point}.csv")
}

pub fn beam_scan_file(point: usize) -> String {
    format!("p1_point{point}.csv")
}

struct SurvivalRow {
    sinr_db: f64,
    stats: TrajectoryStats,
}

pub fn run_control_sim(
    config: &SimConfig,
    out_dir: &Path,
    replicates_override: Option<usize>,
) -> Result<RunManifest, SimError> {
    let section = config.control()?;
    let plant = config.plant()?.build()?;
    let gains = config.controller()?.build()?;
    let link = config.link()?.build()?;
    let (sensing, mapping) = config.sensing()?.build()?;
    let replicates = replicates_override.unwrap_or(section.replicates);

    if section.sinr_db.is_empty() {
        return Err(SimError::Validation(
            "control.sinr_db: at least one operating point is required".into(),
        ));
    }
    let initial_state = section.initial_state();
    if initial_state.len() != plant.state_dim() {
        return Err(SimError::Validation(format!(
            "control.initial_state: length {} does not match plant dimension {}",
            initial_state.len(),
            plant.state_dim()
        )));
    }

    let entropy = topological_entropy(plant.a())
        .map_err(|e| SimError::validation("plant.a", e))?;
    let gamma_critical = critical_sinr(entropy, section.bandwidth)
        .map_err(|e| SimError::validation("control.bandwidth", e))?;

    ensure_out_dir(out_dir)?;
    let mut manifest = RunManifest::new("control-sim", config.hash(), config.seed);
    manifest.add_metric("entropy_bits", serde_json::json!(entropy));
    manifest.add_metric("critical_sinr", serde_json::json!(gamma_critical));
    manifest.add_metric("replicates", serde_json::json!(replicates));

    let beamforming = config.beamforming.as_ref().filter(|b| b.enabled);
    let mut rows: Vec<SurvivalRow> = Vec::new();
    let mut infeasible_points = Vec::new();
    for (point, &sinr_db) in section.sinr_db.iter().enumerate() {
        let point_sinr = db_to_linear(sinr_db);
        let condition = match beamforming {
            Some(bf) => {
                let problem = P1Problem {
                    array: bf.array()?,
                    theta: bf.theta_rad(),
                    plant: plant.clone(),
                    gains: gains.clone(),
                    link,
                    sensing,
                    mapping,
                    gamma_critical: gamma_critical.max(point_sinr),
                    q_current: initial_state.clone(),
                    noise_var: bf.noise_var,
                };
                let report = solve_p1(&problem, &bf.solver_options())
                    .map_err(|e| SimError::validation("beamforming", e))?;
                let scan_name = beam_scan_file(point);
                let mut scan = Vec::new();
                write_scan_csv(&report.scan, &mut scan)
                    .map_err(|e| SimError::runtime(&scan_name, e))?;
                std::fs::write(out_dir.join(&scan_name), scan)
                    .map_err(|e| SimError::runtime(&scan_name, e))?;
                manifest.add_file(&scan_name);
                match report.outcome {
                    SolveOutcome::Solved(solution) => {
                        manifest.add_metric(
                            &format!("beam_power_point{point}"),
                            serde_json::json!(solution.power),
                        );
                        StepCondition {
                            sinr: solution.sinr,
                            beam_gain_sq: solution.sensing_gain_sq,
                        }
                    }
                    SolveOutcome::Infeasible(reason) => {
                        infeasible_points.push((point, sinr_db, format!("{reason:?}")));
                        continue;
                    }
                }
            }
            None => StepCondition { sinr: point_sinr, beam_gain_sq: section.beam_gain_sq },
        };

        let opts = SimulationOptions {
            horizon: section.horizon,
            replicates,
            seed: config.seed.wrapping_add(point as u64),
            initial_state: initial_state.clone(),
            divergence_ceiling: section.divergence_ceiling,
        };
        let stats = simulate_closed_loop(
            &plant,
            &gains,
            &link,
            &sensing,
            &mapping,
            &BeamSchedule::Constant(condition),
            &opts,
        )
        .map_err(|e| SimError::validation("control", e))?;

        let name = trajectory_file(point);
        let mut csv = Vec::new();
        stats.write_csv(&mut csv).map_err(|e| SimError::runtime(&name, e))?;
        std::fs::write(out_dir.join(&name), csv).map_err(|e| SimError::runtime(&name, e))?;
        manifest.add_file(&name);
        manifest.add_metric(
            &format!("survival_point{point}"),
            serde_json::json!({
                "sinr_db": sinr_db,
                "packet_success_rate": stats.packet_success_rate,
                "diverged_frac": stats.diverged_fraction,
            }),
        );
        rows.push(SurvivalRow { sinr_db, stats });
    }

    write_survival_csv(&rows, &out_dir.join(SURVIVAL_FILE))?;
    manifest.add_file(SURVIVAL_FILE);
    for (point, sinr_db, reason) in &infeasible_points {
        manifest.add_metric(
            &format!("infeasible_point{point}"),
            serde_json::json!({ "sinr_db": sinr_db, "reason": reason }),
        );
    }
    run_checks(&mut manifest, &rows);
    manifest.write(out_dir)?;
    Ok(manifest)
}

fn write_survival_csv(rows: &[SurvivalRow], path: &Path) -> Result<(), SimError> {
    let mut csv =
        String::from("sinr_db,packet_success_rate,diverged_frac,final_mean_norm,final_mean_v\n");
    for row in rows {
        let last = row.stats.steps.last().expect("horizon >= 1");
        writeln!(
            csv,
            "{},{},{},{},{}",
            row.sinr_db,
            row.stats.packet_success_rate,
            row.stats.diverged_fraction,
            last.mean_norm,
            last.mean_v
        )
        .expect("string write");
    }
    std::fs::write(path, csv).map_err(|e| SimError::runtime(&format!("{}", path.display()), e))
}

/// The delivery probability is monotone in SINR, so the sampled rate should
/// be too; the slack absorbs binomial noise at practical replicate counts.
fn run_checks(manifest: &mut RunManifest, rows: &[SurvivalRow]) {
    let mut sorted: Vec<&SurvivalRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.sinr_db.total_cmp(&b.sinr_db));
    let violations = sorted
        .windows(2)
        .filter(|w| w[1].stats.packet_success_rate < w[0].stats.packet_success_rate - 0.01)
        .count();
    manifest.add_check(
        "packet-rate-monotone-in-sinr",
        violations == 0,
        format!("{violations} decreases across {} points", sorted.len()),
    );
}
