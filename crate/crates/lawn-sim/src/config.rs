//! Strict TOML configuration: unknown keys are rejected, every section is
//! optional at parse time, and each command validates that the sections it
//! needs are present and well formed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lawn_core::airspace::{discretize, GridSpec, OccupancyLimits};
use lawn_core::beamforming::{ArrayGeometry, SolverOptions};
use lawn_core::channel::{AllocationPolicy, BeamMapping, BeamPlan, LinkSnr};
use lawn_core::control::{
    ControllerGain, CovMapping, LinkReliability, PlantModel, SensingSpec,
    DEFAULT_DIVERGENCE_CEILING,
};
use lawn_core::corridor::{
    DirectionClass, FlightRequest, Geofence, GeofenceKind, DEFAULT_GEOFENCE_STEP_M,
};
use lawn_core::geom::Aabb;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::SimError;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Base seed for every random stream in the run.
    pub seed: u64,
    /// Output directory; the CLI `--out` flag overrides it. Excluded from
    /// the config hash so the same experiment keeps its identity wherever
    /// its artifacts land.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub beams: Option<BeamsSection>,
    #[serde(default)]
    pub capacity: Option<CapacitySection>,
    #[serde(default)]
    pub corridors: Option<CorridorsSection>,
    #[serde(default)]
    pub plant: Option<PlantSection>,
    #[serde(default)]
    pub controller: Option<ControllerSection>,
    #[serde(default)]
    pub link: Option<LinkSection>,
    #[serde(default)]
    pub sensing: Option<SensingSection>,
    #[serde(default)]
    pub control: Option<ControlSection>,
    #[serde(default)]
    pub beamforming: Option<BeamformingSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub cell_size: [f64; 3],
    /// Per-cell occupancy cap used when validating traffic snapshots.
    #[serde(default = "default_occupancy_limit")]
    pub occupancy_limit: u32,
}

fn default_occupancy_limit() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingKind {
    RoundRobin,
    Contiguous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamsSection {
    pub count: usize,
    #[serde(default = "default_mapping")]
    pub mapping: MappingKind,
}

fn default_mapping() -> MappingKind {
    MappingKind::RoundRobin
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Balanced,
    UniformRandom,
}

impl PolicyKind {
    pub fn to_core(self) -> AllocationPolicy {
        match self {
            PolicyKind::Balanced => AllocationPolicy::Balanced,
            PolicyKind::UniformRandom => AllocationPolicy::UniformRandom,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitySection {
    /// Link SNR sweep points, dB.
    pub rho_db: Vec<f64>,
    pub k_min: usize,
    pub k_max: usize,
    #[serde(default = "default_k_step")]
    pub k_step: usize,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Rate floor for the per-SNR admissible-load bound in the manifest.
    #[serde(default = "default_r_min")]
    pub r_min: f64,
}

fn default_k_step() -> usize {
    1
}

fn default_policy() -> PolicyKind {
    PolicyKind::Balanced
}

fn default_replicates() -> usize {
    200
}

fn default_r_min() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionKind {
    EastWest,
    NorthSouth,
}

impl DirectionKind {
    pub fn to_core(self) -> DirectionClass {
        match self {
            DirectionKind::EastWest => DirectionClass::EastWest,
            DirectionKind::NorthSouth => DirectionClass::NorthSouth,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FenceSpec {
    pub id: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub id: String,
    pub origin: [f64; 3],
    pub destination: [f64; 3],
    /// Rate floor for this flight; defaults to the section-wide `r_min`.
    #[serde(default)]
    pub r_min: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorsSection {
    /// Bottom, middle, and top altitude bands, ascending.
    pub bands: [[f64; 2]; 3],
    #[serde(default = "default_direction")]
    pub bottom_direction: DirectionKind,
    /// Link SNR the corridor budgets are derived at, dB.
    pub rho_db: f64,
    /// Per-flight rate floor the budgets guarantee.
    pub r_min: f64,
    #[serde(default = "default_geofence_step")]
    pub geofence_step_m: f64,
    #[serde(default)]
    pub no_fly: Vec<FenceSpec>,
    #[serde(default)]
    pub buffer: Vec<FenceSpec>,
    #[serde(default)]
    pub requests: Vec<RequestSpec>,
}

fn default_direction() -> DirectionKind {
    DirectionKind::EastWest
}

fn default_geofence_step() -> f64 {
    DEFAULT_GEOFENCE_STEP_M
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub process_noise: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub feedback: Vec<Vec<f64>>,
    pub lyapunov: Vec<Vec<f64>>,
    pub decay_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub steepness: f64,
    /// Sigmoid midpoint, dB.
    pub threshold_db: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingSection {
    pub noise_var: f64,
    pub snapshots: u32,
    pub rx_antennas: u32,
    pub channel_gain_mag: f64,
    pub slant_range: f64,
    #[serde(default)]
    pub velocity_factor: f64,
    #[serde(default = "default_step_dt")]
    pub step_dt: f64,
    #[serde(default)]
    pub num_positions: Option<usize>,
}

fn default_step_dt() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    /// Operating link SINR points to simulate, dB.
    pub sinr_db: Vec<f64>,
    pub horizon: usize,
    pub replicates: usize,
    pub initial_state: Vec<f64>,
    #[serde(default = "default_ceiling")]
    pub divergence_ceiling: f64,
    /// Sensing beam gain |a_dot^H w|^2 assumed when the beam designer is
    /// disabled.
    #[serde(default = "default_beam_gain")]
    pub beam_gain_sq: f64,
    /// Link capacity in bits per control step, for the critical SINR.
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
}

fn default_ceiling() -> f64 {
    DEFAULT_DIVERGENCE_CEILING
}

fn default_beam_gain() -> f64 {
    1.0
}

fn default_bandwidth() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamformingSection {
    #[serde(default)]
    pub enabled: bool,
    pub elements: usize,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    /// Target direction off broadside, degrees.
    pub theta_deg: f64,
    /// Communication receiver noise variance.
    pub noise_var: f64,
    #[serde(default = "default_kappa_points")]
    pub kappa_points: usize,
    #[serde(default = "default_power_cap")]
    pub power_cap: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_spacing() -> f64 {
    0.5
}

fn default_kappa_points() -> usize {
    101
}

fn default_power_cap() -> f64 {
    1e6
}

fn default_rel_tol() -> f64 {
    1e-6
}

impl SimConfig {
    pub fn from_path(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::validation(&format!("config {}", path.display()), e))?;
        toml::from_str(&text)
            .map_err(|e| SimError::validation(&format!("config {}", path.display()), e))
    }

    /// Hash of the experiment definition: every field except `out_dir`,
    /// which only says where artifacts land.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    pub fn grid(&self) -> Result<&GridSection, SimError> {
        require(&self.grid, "grid")
    }

    pub fn beams(&self) -> Result<&BeamsSection, SimError> {
        require(&self.beams, "beams")
    }

    pub fn capacity(&self) -> Result<&CapacitySection, SimError> {
        require(&self.capacity, "capacity")
    }

    pub fn corridors(&self) -> Result<&CorridorsSection, SimError> {
        require(&self.corridors, "corridors")
    }

    pub fn plant(&self) -> Result<&PlantSection, SimError> {
        require(&self.plant, "plant")
    }

    pub fn controller(&self) -> Result<&ControllerSection, SimError> {
        require(&self.controller, "controller")
    }

    pub fn link(&self) -> Result<&LinkSection, SimError> {
        require(&self.link, "link")
    }

    pub fn sensing(&self) -> Result<&SensingSection, SimError> {
        require(&self.sensing, "sensing")
    }

    pub fn control(&self) -> Result<&ControlSection, SimError> {
        require(&self.control, "control")
    }
}

fn require<'a, T>(field: &'a Option<T>, name: &str) -> Result<&'a T, SimError> {
    field
        .as_ref()
        .ok_or_else(|| SimError::Validation(format!("config section [{name}] is required")))
}

fn matrix(rows: &[Vec<f64>], context: &str) -> Result<DMatrix<f64>, SimError> {
    if rows.is_empty() {
        return Err(SimError::Validation(format!("{context}: matrix must not be empty")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(SimError::Validation(format!(
            "{context}: matrix rows must be non-empty and equal length"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

impl GridSection {
    pub fn build(&self) -> Result<(GridSpec, OccupancyLimits), SimError> {
        let grid = discretize(self.bounds_min, self.bounds_max, self.cell_size)
            .map_err(|e| SimError::validation("grid", e))?;
        let limits = OccupancyLimits::uniform(grid.total_cells(), self.occupancy_limit);
        Ok((grid, limits))
    }
}

impl BeamsSection {
    pub fn build(&self, grid: &GridSpec) -> Result<BeamPlan, SimError> {
        let mapping = match self.mapping {
            MappingKind::RoundRobin => BeamMapping::RoundRobin,
            MappingKind::Contiguous => BeamMapping::Contiguous,
        };
        BeamPlan::mapped(grid.total_cells(), self.count, mapping)
            .map_err(|e| SimError::validation("beams", e))
    }
}

impl CapacitySection {
    pub fn k_range(&self) -> Result<Vec<usize>, SimError> {
        if self.k_step == 0 {
            return Err(SimError::Validation("capacity: k_step must be positive".into()));
        }
        if self.k_min > self.k_max {
            return Err(SimError::Validation(
                "capacity: k_min must not exceed k_max".into(),
            ));
        }
        Ok((self.k_min..=self.k_max).step_by(self.k_step).collect())
    }

    pub fn snrs(&self) -> Result<Vec<(f64, LinkSnr)>, SimError> {
        self.rho_db
            .iter()
            .map(|&db| {
                LinkSnr::from_db(db)
                    .map(|s| (db, s))
                    .map_err(|e| SimError::validation("capacity.rho_db", e))
            })
            .collect()
    }
}

impl CorridorsSection {
    pub fn snr(&self) -> Result<LinkSnr, SimError> {
        LinkSnr::from_db(self.rho_db).map_err(|e| SimError::validation("corridors.rho_db", e))
    }

    pub fn geofences(&self) -> Vec<Geofence> {
        let fence = |spec: &FenceSpec, kind| Geofence {
            id: spec.id.clone(),
            volume: Aabb::new(spec.min, spec.max),
            kind,
        };
        self.no_fly
            .iter()
            .map(|s| fence(s, GeofenceKind::NoFly))
            .chain(self.buffer.iter().map(|s| fence(s, GeofenceKind::Buffer)))
            .collect()
    }

    pub fn flight_requests(&self) -> Vec<FlightRequest> {
        self.requests
            .iter()
            .map(|r| FlightRequest {
                id: r.id.clone(),
                origin: r.origin,
                destination: r.destination,
                r_min: r.r_min.unwrap_or(self.r_min),
            })
            .collect()
    }
}

impl PlantSection {
    pub fn build(&self) -> Result<PlantModel, SimError> {
        PlantModel::new(
            matrix(&self.a, "plant.a")?,
            matrix(&self.b, "plant.b")?,
            matrix(&self.process_noise, "plant.process_noise")?,
        )
        .map_err(|e| SimError::validation("plant", e))
    }
}

impl ControllerSection {
    pub fn build(&self) -> Result<ControllerGain, SimError> {
        ControllerGain::new(
            matrix(&self.feedback, "controller.feedback")?,
            matrix(&self.lyapunov, "controller.lyapunov")?,
            self.decay_rate,
        )
        .map_err(|e| SimError::validation("controller", e))
    }
}

impl LinkSection {
    pub fn build(&self) -> Result<LinkReliability, SimError> {
        LinkReliability::new(self.steepness, db_to_linear(self.threshold_db))
            .map_err(|e| SimError::validation("link", e))
    }
}

impl SensingSection {
    pub fn build(&self) -> Result<(SensingSpec, CovMapping), SimError> {
        let spec = SensingSpec::new(
            self.noise_var,
            self.snapshots,
            self.rx_antennas,
            self.channel_gain_mag,
            self.slant_range,
        )
        .map_err(|e| SimError::validation("sensing", e))?;
        let mapping = CovMapping {
            velocity_factor: self.velocity_factor,
            step_dt: self.step_dt,
            num_positions: self.num_positions,
        };
        Ok((spec, mapping))
    }
}

impl ControlSection {
    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_vec(self.initial_state.clone())
    }
}

impl BeamformingSection {
    pub fn array(&self) -> Result<ArrayGeometry, SimError> {
        ArrayGeometry::new(self.elements, self.spacing)
            .map_err(|e| SimError::validation("beamforming", e))
    }

    pub fn theta_rad(&self) -> f64 {
        self.theta_deg.to_radians()
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            kappa_points: self.kappa_points,
            rel_tol: self.rel_tol,
            power_cap: self.power_cap,
        }
    }
}

/// Metric map used in manifests; BTreeMap keeps JSON output ordered.
pub type Metrics = BTreeMap<String, serde_json::Value>;
