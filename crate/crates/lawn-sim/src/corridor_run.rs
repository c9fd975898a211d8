//! `corridor-demo`: builds the layered corridor system over the configured
//! grid, derives per-corridor concurrency budgets, and replays the configured
//! flight requests through admission control.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use lawn_core::airspace::{validate_state, TrafficState};
use lawn_core::channel::BeamPlan;
use lawn_core::corridor::{
    build_layered_plan, check_geofence, corridor_beam_budget, AdmissionDecision, AdmissionLedger,
    BeamBudget, CorridorPlan,
};
use lawn_core::geom::Point3;

use crate::config::SimConfig;
use crate::error::SimError;
use crate::manifest::{ensure_out_dir, RunManifest};

pub const ADMISSION_FILE: &str = "admission_log.csv";
pub const OCCUPANCY_FILE: &str = "occupancy.csv";
pub const TRAFFIC_FILE: &str = "traffic.csv";

struct AdmissionRow {
    timestamp: usize,
    request_id: String,
    admitted: bool,
    reason: String,
    corridor_path: Vec<String>,
}

pub fn run_corridor_demo(config: &SimConfig, out_dir: &Path) -> Result<RunManifest, SimError> {
    let grid_section = config.grid()?;
    let beams_section = config.beams()?;
    let section = config.corridors()?;

    let (grid, limits) = grid_section.build()?;
    let beam_plan = beams_section.build(&grid)?;
    let snr = section.snr()?;
    let plan = build_layered_plan(
        &grid,
        &section.bands,
        &section.geofences(),
        section.bottom_direction.to_core(),
    )
    .map_err(|e| SimError::validation("corridors", e))?;

    let budgets = corridor_budgets(&plan, &beam_plan, &grid, snr, section.r_min)?;

    let mut ledger = AdmissionLedger::new();
    let mut rows = Vec::new();
    let mut admitted_routes: Vec<(String, Vec<Point3>)> = Vec::new();
    let mut origin_cells = Vec::new();
    for (timestamp, request) in section.flight_requests().iter().enumerate() {
        let decision = ledger
            .admit(request, &plan, &grid, &budgets, section.geofence_step_m)
            .map_err(|e| SimError::validation(&format!("request {}", request.id), e))?;
        let row = match decision {
            AdmissionDecision::Admitted { corridor_path, waypoints } => {
                admitted_routes.push((request.id.clone(), waypoints));
                origin_cells.push(
                    grid.cell_of(request.origin)
                        .map_err(|e| SimError::validation(&format!("request {}", request.id), e))?,
                );
                AdmissionRow {
                    timestamp,
                    request_id: request.id.clone(),
                    admitted: true,
                    reason: String::new(),
                    corridor_path,
                }
            }
            AdmissionDecision::Rejected(reason) => AdmissionRow {
                timestamp,
                request_id: request.id.clone(),
                admitted: false,
                reason: reason.label().to_string(),
                corridor_path: Vec::new(),
            },
        };
        rows.push(row);
    }

    let traffic = TrafficState::new(origin_cells, grid.total_cells())
        .map_err(|e| SimError::validation("corridors.requests", e))?;

    ensure_out_dir(out_dir)?;
    write_admission_csv(&rows, &out_dir.join(ADMISSION_FILE))?;
    write_occupancy_csv(&ledger, &budgets, &out_dir.join(OCCUPANCY_FILE))?;
    let mut traffic_csv = Vec::new();
    traffic
        .write_csv(&mut traffic_csv)
        .map_err(|e| SimError::runtime("traffic csv", e))?;
    std::fs::write(out_dir.join(TRAFFIC_FILE), traffic_csv)
        .map_err(|e| SimError::runtime(TRAFFIC_FILE, e))?;

    let mut manifest = RunManifest::new("corridor-demo", config.hash(), config.seed);
    manifest.add_file(ADMISSION_FILE);
    manifest.add_file(OCCUPANCY_FILE);
    manifest.add_file(TRAFFIC_FILE);
    manifest.add_metric("num_corridors", serde_json::json!(plan.corridors.len()));
    manifest.add_metric("requests", serde_json::json!(rows.len()));
    manifest.add_metric(
        "admitted",
        serde_json::json!(rows.iter().filter(|r| r.admitted).count()),
    );
    run_checks(
        &mut manifest,
        &plan,
        &ledger,
        &budgets,
        &admitted_routes,
        &traffic,
        &limits,
        section.geofence_step_m,
    );
    manifest.write(out_dir)?;
    Ok(manifest)
}

fn corridor_budgets(
    plan: &CorridorPlan,
    beam_plan: &BeamPlan,
    grid: &lawn_core::airspace::GridSpec,
    snr: lawn_core::channel::LinkSnr,
    r_min: f64,
) -> Result<BTreeMap<String, BeamBudget>, SimError> {
    let mut budgets = BTreeMap::new();
    for corridor in &plan.corridors {
        let budget = corridor_beam_budget(corridor, beam_plan, grid, snr, r_min)
            .map_err(|e| SimError::validation(&format!("corridor {}", corridor.id), e))?;
        budgets.insert(corridor.id.clone(), budget);
    }
    Ok(budgets)
}

fn write_admission_csv(rows: &[AdmissionRow], path: &Path) -> Result<(), SimError> {
    let mut csv = String::from("timestamp,request_id,decision,reason,corridor_path\n");
    for row in rows {
        writeln!(
            csv,
            "{},{},{},{},{}",
            row.timestamp,
            row.request_id,
            if row.admitted { "admitted" } else { "rejected" },
            row.reason,
            row.corridor_path.join("|")
        )
        .expect("string write");
    }
    std::fs::write(path, csv).map_err(|e| SimError::runtime(&format!("{}", path.display()), e))
}

fn write_occupancy_csv(
    ledger: &AdmissionLedger,
    budgets: &BTreeMap<String, BeamBudget>,
    path: &Path,
) -> Result<(), SimError> {
    let mut csv = String::from("corridor_id,max_concurrent,occupancy,beams_in_corridor,feasible\n");
    for (id, budget) in budgets {
        writeln!(
            csv,
            "{},{},{},{},{}",
            id,
            budget.max_concurrent,
            ledger.occupancy_of(id),
            budget.beams_in_corridor,
            budget.feasible
        )
        .expect("string write");
    }
    std::fs::write(path, csv).map_err(|e| SimError::runtime(&format!("{}", path.display()), e))
}

#[allow(clippy::too_many_arguments)]
fn run_checks(
    manifest: &mut RunManifest,
    plan: &CorridorPlan,
    ledger: &AdmissionLedger,
    budgets: &BTreeMap<String, BeamBudget>,
    admitted_routes: &[(String, Vec<Point3>)],
    traffic: &TrafficState,
    limits: &lawn_core::airspace::OccupancyLimits,
    geofence_step_m: f64,
) {
    let mut overlaps = 0usize;
    for (i, a) in plan.corridors.iter().enumerate() {
        for b in plan.corridors.iter().skip(i + 1) {
            if a.volume.overlaps(&b.volume) {
                overlaps += 1;
            }
        }
    }
    manifest.add_check(
        "corridors-disjoint",
        overlaps == 0,
        format!("{overlaps} overlapping corridor pairs"),
    );

    let mut route_violations = 0usize;
    let mut route_errors = Vec::new();
    for (id, waypoints) in admitted_routes {
        match check_geofence(waypoints, &plan.geofences, geofence_step_m) {
            Ok(v) => route_violations += v.len(),
            Err(e) => route_errors.push(format!("{id}: {e}")),
        }
    }
    manifest.add_check(
        "routes-clear-geofences",
        route_violations == 0 && route_errors.is_empty(),
        if route_errors.is_empty() {
            format!(
                "{} admitted routes, {route_violations} geofence contacts",
                admitted_routes.len()
            )
        } else {
            route_errors.join("; ")
        },
    );

    let over_budget: Vec<&str> = budgets
        .iter()
        .filter(|(id, b)| ledger.occupancy_of(id) > b.max_concurrent)
        .map(|(id, _)| id.as_str())
        .collect();
    manifest.add_check(
        "occupancy-within-budget",
        over_budget.is_empty(),
        if over_budget.is_empty() {
            format!("{} corridors within budget", budgets.len())
        } else {
            format!("over budget: {}", over_budget.join(", "))
        },
    );

    match validate_state(traffic, limits) {
        Ok(report) => manifest.add_check(
            "traffic-within-cell-limits",
            report.is_ok(),
            format!("{} occupancy violations", report.violations.len()),
        ),
        Err(e) => manifest.add_check("traffic-within-cell-limits", false, e.to_string()),
    }
}
