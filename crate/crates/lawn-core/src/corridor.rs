//! Layered air corridors with admission control.
//!
//! The airspace is organized into three altitude-disjoint functional layers:
//! two directional layers carrying east-west and north-south traffic, and a
//! transition layer between them where flights climb, descend, and change
//! heading. Which direction flies on the bottom layer is a planning choice.
//! No-fly volumes are carved out of every layer exactly, so corridor volumes
//! never intersect a no-fly box.
//!
//! Each corridor inherits a beam budget from the channel model: with `L_c`
//! distinct beams covering its cells, the corridor can sustain
//! `floor(L_c * (1 + 1/(2^r_min - 1) - 1/rho))` concurrent flights while
//! guaranteeing every flight `r_min` bits/s/Hz. Admission control enforces
//! the budget against live occupancy and rejects flights whose route would
//! cross a no-fly volume.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airspace::{AirspaceError, GridSpec};
use crate::channel::{qos_capacity_bound, BeamPlan, ChannelError, LinkSnr};
use crate::geom::{subtract_all, Aabb, Point3};

/// Default spacing between geofence samples along a route segment, meters.
pub const DEFAULT_GEOFENCE_STEP_M: f64 = 1.0;

#[derive(Debug, Error)]
pub enum CorridorError {
    #[error("altitude bands must be strictly increasing and non-overlapping: band {0} starts below the previous band's top")]
    OverlappingBands(usize),
    #[error("altitude band {index} [{low}, {high}] is empty or outside the grid z-range")]
    BadBand { index: usize, low: f64, high: f64 },
    #[error("layer {0} is fully covered by no-fly volumes")]
    LayerFullyBlocked(String),
    #[error("corridor {0} covers no grid cells")]
    EmptyCorridor(String),
    #[error("geofence check needs at least one waypoint")]
    NoWaypoints,
    #[error("geofence sample step must be positive, got {0}")]
    BadSampleStep(f64),
    #[error("{which} endpoint {point:?} is not inside any corridor")]
    NoCorridorAtEndpoint { which: &'static str, point: Point3 },
    #[error("no budget derived for corridor {0}")]
    MissingBudget(String),
    #[error("flight {0} is already admitted")]
    DuplicateFlight(String),
    #[error("flight {0} is not currently admitted")]
    UnknownFlight(String),
    #[error(transparent)]
    Airspace(#[from] AirspaceError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Functional role of a corridor layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    DirectionalEastWest,
    DirectionalNorthSouth,
    Transition,
}

/// Horizontal travel direction a corridor carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionClass {
    EastWest,
    NorthSouth,
}

impl DirectionClass {
    /// Grid axis the direction travels along: x for east-west, y for
    /// north-south.
    pub fn axis(self) -> usize {
        match self {
            DirectionClass::EastWest => 0,
            DirectionClass::NorthSouth => 1,
        }
    }

    fn role(self) -> LayerRole {
        match self {
            DirectionClass::EastWest => LayerRole::DirectionalEastWest,
            DirectionClass::NorthSouth => LayerRole::DirectionalNorthSouth,
        }
    }

    fn other(self) -> DirectionClass {
        match self {
            DirectionClass::EastWest => DirectionClass::NorthSouth,
            DirectionClass::NorthSouth => DirectionClass::EastWest,
        }
    }
}

/// One axis-aligned corridor volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub id: String,
    pub volume: Aabb,
    pub layer_role: LayerRole,
    /// Altitude band of the layer this corridor belongs to.
    pub altitude_band: [f64; 2],
    /// Travel direction for directional layers; `None` in the transition
    /// layer, which permits climbs, descents, and hover.
    pub direction_class: Option<DirectionClass>,
}

/// Kind of restricted volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeofenceKind {
    /// Hard exclusion: carved out of corridors, any contact is a violation.
    NoFly,
    /// Advisory standoff volume, carried in the plan for display and
    /// downstream planning; it does not block admission.
    Buffer,
}

/// Restricted volume (closed: boundary contact counts as inside).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geofence {
    pub id: String,
    pub volume: Aabb,
    pub kind: GeofenceKind,
}

/// Full corridor layout: layered volumes, geofences, and layer ordering from
/// bottom to top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorPlan {
    pub corridors: Vec<Corridor>,
    pub geofences: Vec<Geofence>,
    /// Roles from the lowest to the highest altitude band.
    pub layer_order: [LayerRole; 3],
}

impl CorridorPlan {
    /// First corridor (in plan order) containing `point`, if any.
    pub fn corridor_at(&self, point: &Point3) -> Option<&Corridor> {
        self.corridors.iter().find(|c| c.volume.contains(point))
    }

    pub fn corridor_by_id(&self, id: &str) -> Option<&Corridor> {
        self.corridors.iter().find(|c| c.id == id)
    }

    fn layer_band(&self, role: LayerRole) -> Option<[f64; 2]> {
        self.corridors
            .iter()
            .find(|c| c.layer_role == role)
            .map(|c| c.altitude_band)
    }

    fn no_fly_volumes(&self) -> impl Iterator<Item = &Geofence> {
        self.geofences.iter().filter(|g| g.kind == GeofenceKind::NoFly)
    }
}

/// Builds the three-layer corridor plan over a grid.
///
/// `bands` are the bottom, middle, and top altitude bands in ascending order;
/// they must not overlap and must lie inside the grid's z-range.
/// `bottom_direction` selects which directional class flies on the bottom
/// layer; the opposite class takes the top layer and the middle band is the
/// transition layer. No-fly volumes are subtracted exactly, splitting a layer
/// into several corridors where needed.
pub fn build_layered_plan(
    grid: &GridSpec,
    bands: &[[f64; 2]; 3],
    geofences: &[Geofence],
    bottom_direction: DirectionClass,
) -> Result<CorridorPlan, CorridorError> {
    let z_lo = grid.bounds_min()[2];
    let z_hi = grid.bounds_max()[2];
    for (index, band) in bands.iter().enumerate() {
        if !(band[0] < band[1] && band[0] >= z_lo && band[1] <= z_hi) {
            return Err(CorridorError::BadBand { index, low: band[0], high: band[1] });
        }
        if index > 0 && band[0] < bands[index - 1][1] {
            return Err(CorridorError::OverlappingBands(index));
        }
    }
    let layer_order = [
        bottom_direction.role(),
        LayerRole::Transition,
        bottom_direction.other().role(),
    ];
    let layer_names = ["bottom", "middle", "top"];
    let no_fly: Vec<Aabb> = geofences
        .iter()
        .filter(|g| g.kind == GeofenceKind::NoFly)
        .map(|g| g.volume)
        .collect();
    let mut corridors = Vec::new();
    for (layer, (&band, &role)) in bands.iter().zip(layer_order.iter()).enumerate() {
        let layer_box = Aabb::new(
            [grid.bounds_min()[0], grid.bounds_min()[1], band[0]],
            [grid.bounds_max()[0], grid.bounds_max()[1], band[1]],
        );
        let pieces = subtract_all(layer_box, &no_fly);
        if pieces.is_empty() {
            return Err(CorridorError::LayerFullyBlocked(layer_names[layer].into()));
        }
        let direction_class = match role {
            LayerRole::DirectionalEastWest => Some(DirectionClass::EastWest),
            LayerRole::DirectionalNorthSouth => Some(DirectionClass::NorthSouth),
            LayerRole::Transition => None,
        };
        for (i, piece) in pieces.iter().enumerate() {
            corridors.push(Corridor {
                id: format!("{}-{}", layer_names[layer], i),
                volume: *piece,
                layer_role: role,
                altitude_band: band,
                direction_class,
            });
        }
    }
    Ok(CorridorPlan {
        corridors,
        geofences: geofences.to_vec(),
        layer_order,
    })
}

/// Concurrency budget a corridor's beam resources support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamBudget {
    pub corridor_id: String,
    /// Maximum concurrent flights that still leave each of them `r_min`.
    pub max_concurrent: u32,
    /// Distinct beams serving the corridor's cells.
    pub beams_in_corridor: usize,
    /// Link SNR the budget was derived at, linear.
    pub rho: f64,
    /// Per-flight rate floor the budget guarantees, bits/s/Hz.
    pub r_min: f64,
    /// False when the budget is zero: no flight can be admitted at this rate
    /// floor.
    pub feasible: bool,
}

/// Derives the concurrency budget for one corridor.
pub fn corridor_beam_budget(
    corridor: &Corridor,
    plan: &BeamPlan,
    grid: &GridSpec,
    snr: LinkSnr,
    r_min: f64,
) -> Result<BeamBudget, CorridorError> {
    let cells = grid.cells_with_center_in(&corridor.volume);
    if cells.is_empty() {
        return Err(CorridorError::EmptyCorridor(corridor.id.clone()));
    }
    let mut beams: Vec<usize> = cells
        .iter()
        .map(|&cell| {
            plan.beam_of_cell(cell).ok_or(ChannelError::UnmappedCell {
                cell,
                cells: plan.num_cells(),
            })
        })
        .collect::<Result<_, _>>()?;
    beams.sort_unstable();
    beams.dedup();
    let bound = qos_capacity_bound(beams.len(), snr, r_min)?;
    let max_concurrent = bound.max_load.floor() as u32;
    Ok(BeamBudget {
        corridor_id: corridor.id.clone(),
        max_concurrent,
        beams_in_corridor: beams.len(),
        rho: snr.linear(),
        r_min,
        feasible: max_concurrent > 0,
    })
}

/// One route point or segment found inside a no-fly volume.
#[derive(Debug, Clone, PartialEq)]
pub struct GeofenceViolation {
    /// Segment whose sweep detected the contact; a waypoint counts against
    /// the segment it starts.
    pub segment_index: usize,
    pub geofence_id: String,
    /// First sampled point found inside the volume.
    pub position: Point3,
}

/// Checks a waypoint route against no-fly volumes.
///
/// Every waypoint and every straight segment (sampled every `step_m` meters)
/// is tested with closed containment, so touching a no-fly face is a
/// violation. At most one violation is reported per segment and fence pair.
pub fn check_geofence(
    waypoints: &[Point3],
    geofences: &[Geofence],
    step_m: f64,
) -> Result<Vec<GeofenceViolation>, CorridorError> {
    if waypoints.is_empty() {
        return Err(CorridorError::NoWaypoints);
    }
    if step_m <= 0.0 || !step_m.is_finite() {
        return Err(CorridorError::BadSampleStep(step_m));
    }
    let no_fly: Vec<&Geofence> =
        geofences.iter().filter(|g| g.kind == GeofenceKind::NoFly).collect();
    let mut violations = Vec::new();
    let single = waypoints.len() == 1;
    let segment_count = if single { 1 } else { waypoints.len() - 1 };
    for segment in 0..segment_count {
        let start = waypoints[segment];
        let end = if single { start } else { waypoints[segment + 1] };
        let length: f64 = (0..3)
            .map(|i| (end[i] - start[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        let samples = if length == 0.0 { 1 } else { (length / step_m).ceil() as usize };
        let last_segment = segment + 1 == segment_count;
        for fence in &no_fly {
            // Samples cover [start, end); the final waypoint is closed off on
            // the last segment so every waypoint is tested exactly once.
            let mut hit = None;
            for s in 0..samples {
                let t = s as f64 / samples as f64;
                let p = [
                    start[0] + t * (end[0] - start[0]),
                    start[1] + t * (end[1] - start[1]),
                    start[2] + t * (end[2] - start[2]),
                ];
                if fence.volume.contains(&p) {
                    hit = Some(p);
                    break;
                }
            }
            if hit.is_none() && last_segment && fence.volume.contains(&end) {
                hit = Some(end);
            }
            if let Some(position) = hit {
                violations.push(GeofenceViolation {
                    segment_index: segment,
                    geofence_id: fence.id.clone(),
                    position,
                });
            }
        }
    }
    Ok(violations)
}

/// A flight asking to enter the corridor system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightRequest {
    pub id: String,
    pub origin: Point3,
    pub destination: Point3,
    /// Rate floor the flight needs, bits/s/Hz. Admission rejects the flight
    /// if any traversed corridor's budget guarantees less.
    pub r_min: f64,
}

/// Why a flight was turned away.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// A traversed corridor is at its concurrency budget, or its budget
    /// cannot guarantee the requested rate floor.
    Capacity { corridor_id: String },
    /// The route or an endpoint touches a no-fly volume.
    Geofence,
    /// No corridor contains an endpoint, so no corridor route exists.
    NoRoute,
}

impl RejectReason {
    /// Stable one-word label used in admission logs.
    pub fn label(&self) -> &'static str {
        match self {
            RejectReason::Capacity { .. } => "capacity",
            RejectReason::Geofence => "geofence",
            RejectReason::NoRoute => "no-route",
        }
    }
}

/// Outcome of an admission attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum AdmissionDecision {
    Admitted {
        /// Corridors the route traverses, in travel order.
        corridor_path: Vec<String>,
        waypoints: Vec<Point3>,
    },
    Rejected(RejectReason),
}

/// Live occupancy ledger for admission control.
///
/// Occupancy counts flights admitted and not yet released; each flight
/// occupies every corridor on its path for its whole duration, which is the
/// conservative reading of corridor capacity.
#[derive(Debug, Clone, Default)]
pub struct AdmissionLedger {
    occupancy: BTreeMap<String, u32>,
    flights: BTreeMap<String, Vec<String>>,
}

impl AdmissionLedger {
    pub fn new() -> Self {
        AdmissionLedger::default()
    }

    pub fn occupancy_of(&self, corridor_id: &str) -> u32 {
        self.occupancy.get(corridor_id).copied().unwrap_or(0)
    }

    pub fn active_flights(&self) -> usize {
        self.flights.len()
    }

    /// Attempts to admit a flight, updating occupancy on success.
    ///
    /// Endpoints outside the grid are a caller error; everything else maps to
    /// an [`AdmissionDecision`]. Checks run in a fixed order so the reported
    /// rejection reason is deterministic: geofenced endpoints, then route
    /// existence, then route geofencing, then capacity.
    pub fn admit(
        &mut self,
        request: &FlightRequest,
        plan: &CorridorPlan,
        grid: &GridSpec,
        budgets: &BTreeMap<String, BeamBudget>,
        geofence_step_m: f64,
    ) -> Result<AdmissionDecision, CorridorError> {
        if self.flights.contains_key(&request.id) {
            return Err(CorridorError::DuplicateFlight(request.id.clone()));
        }
        grid.cell_of(request.origin)?;
        grid.cell_of(request.destination)?;
        for fence in plan.no_fly_volumes() {
            if fence.volume.contains(&request.origin)
                || fence.volume.contains(&request.destination)
            {
                return Ok(AdmissionDecision::Rejected(RejectReason::Geofence));
            }
        }
        let route = match route_in_corridors(request.origin, request.destination, plan, grid) {
            Ok(route) => route,
            Err(CorridorError::NoCorridorAtEndpoint { .. }) => {
                return Ok(AdmissionDecision::Rejected(RejectReason::NoRoute));
            }
            Err(other) => return Err(other),
        };
        let violations = check_geofence(&route.waypoints, &plan.geofences, geofence_step_m)?;
        if !violations.is_empty() {
            return Ok(AdmissionDecision::Rejected(RejectReason::Geofence));
        }
        // A route may revisit a corridor (descending back through the
        // transition layer); the flight occupies each corridor once.
        let mut traversed = route.corridor_path.clone();
        traversed.sort_unstable();
        traversed.dedup();
        for corridor_id in &traversed {
            let budget = budgets
                .get(corridor_id)
                .ok_or_else(|| CorridorError::MissingBudget(corridor_id.clone()))?;
            if request.r_min > budget.r_min
                || self.occupancy_of(corridor_id) >= budget.max_concurrent
            {
                return Ok(AdmissionDecision::Rejected(RejectReason::Capacity {
                    corridor_id: corridor_id.clone(),
                }));
            }
        }
        for corridor_id in &traversed {
            *self.occupancy.entry(corridor_id.clone()).or_insert(0) += 1;
        }
        self.flights.insert(request.id.clone(), traversed);
        Ok(AdmissionDecision::Admitted {
            corridor_path: route.corridor_path,
            waypoints: route.waypoints,
        })
    }

    /// Releases an admitted flight, freeing its corridor occupancy.
    pub fn release(&mut self, flight_id: &str) -> Result<(), CorridorError> {
        let path = self
            .flights
            .remove(flight_id)
            .ok_or_else(|| CorridorError::UnknownFlight(flight_id.to_string()))?;
        for corridor_id in &path {
            if let Some(count) = self.occupancy.get_mut(corridor_id) {
                *count = count.saturating_sub(1);
            }
        }
        Ok(())
    }
}

/// Route through the corridor system.
#[derive(Debug, Clone, PartialEq)]
pub struct CorridorRoute {
    /// Waypoints at corridor-cell centers, travel order.
    pub waypoints: Vec<Point3>,
    /// Distinct corridors traversed, travel order.
    pub corridor_path: Vec<String>,
}

/// Plans the deterministic route between two points.
///
/// Horizontal travel happens only in the directional layer matching its
/// axis; heading changes and altitude moves go through the transition layer.
/// The result is an L-shaped polyline over cell centers: travel along the
/// entry layer's direction first (east-west first when the origin sits in the
/// transition layer and both directions are needed), switch direction via the
/// other directional layer, then adjust altitude at the destination column.
/// Origin and destination aligned along a single axis inside one corridor
/// collapse to a straight segment.
pub fn route_in_corridors(
    origin: Point3,
    destination: Point3,
    plan: &CorridorPlan,
    grid: &GridSpec,
) -> Result<CorridorRoute, CorridorError> {
    let origin_corridor = plan
        .corridor_at(&origin)
        .ok_or(CorridorError::NoCorridorAtEndpoint { which: "origin", point: origin })?;
    plan.corridor_at(&destination).ok_or(CorridorError::NoCorridorAtEndpoint {
        which: "destination",
        point: destination,
    })?;
    let o = grid.axis_indices(grid.cell_of(origin)?)?;
    let d = grid.axis_indices(grid.cell_of(destination)?)?;

    let moved_axes: Vec<usize> = (0..3).filter(|&a| o[a] != d[a]).collect();
    if moved_axes.is_empty() {
        return finish_route(vec![o], plan, grid);
    }
    if moved_axes.len() == 1 && origin_corridor.volume.contains(&destination) {
        let axis = moved_axes[0];
        let straight_ok = axis == 2
            || origin_corridor
                .direction_class
                .map(|dc| dc.axis() == axis)
                .unwrap_or(false);
        if straight_ok {
            return finish_route(vec![o, d], plan, grid);
        }
    }

    let first = match origin_corridor.direction_class {
        Some(dc) if o[dc.axis()] != d[dc.axis()] => dc,
        _ if o[0] != d[0] => DirectionClass::EastWest,
        _ if o[1] != d[1] => DirectionClass::NorthSouth,
        // Pure altitude change across corridors: one vertical leg.
        _ => return finish_route(vec![o, d], plan, grid),
    };
    let second = first.other();

    let mut corners: Vec<[usize; 3]> = vec![o];
    let mut at = o;
    at[2] = layer_z_cell(plan, grid, first.role(), at[2]);
    corners.push(at);
    at[first.axis()] = d[first.axis()];
    corners.push(at);
    if at[second.axis()] != d[second.axis()] {
        at[2] = layer_z_cell(plan, grid, second.role(), at[2]);
        corners.push(at);
        at[second.axis()] = d[second.axis()];
        corners.push(at);
    }
    at[2] = d[2];
    corners.push(at);
    finish_route(corners, plan, grid)
}

/// Z cell index to fly at inside the layer with `role`. When the current z
/// cell is already within the layer's band it is kept; otherwise the lowest
/// cell of the band is used.
fn layer_z_cell(plan: &CorridorPlan, grid: &GridSpec, role: LayerRole, current_z: usize) -> usize {
    let Some(band) = plan.layer_band(role) else {
        return current_z;
    };
    let z_size = grid.cell_size()[2];
    let z_min = grid.bounds_min()[2];
    let center_of = |z: usize| z_min + (z as f64 + 0.5) * z_size;
    if center_of(current_z) > band[0] && center_of(current_z) < band[1] {
        return current_z;
    }
    let lowest = ((band[0] - z_min) / z_size).floor() as usize;
    lowest.min(grid.counts()[2] - 1)
}

fn finish_route(
    corners: Vec<[usize; 3]>,
    plan: &CorridorPlan,
    grid: &GridSpec,
) -> Result<CorridorRoute, CorridorError> {
    // Dedupe corners, then walk every cell between them so corridor
    // attribution sees each traversed cell, not just the turns.
    let mut deduped: Vec<[usize; 3]> = Vec::new();
    for corner in corners {
        if deduped.last() != Some(&corner) {
            deduped.push(corner);
        }
    }
    let mut cells: Vec<[usize; 3]> = vec![deduped[0]];
    for pair in deduped.windows(2) {
        let (prev, next) = (pair[0], pair[1]);
        let axis = (0..3).find(|&a| prev[a] != next[a]).expect("deduped corners differ");
        let mut at = prev;
        while at[axis] != next[axis] {
            at[axis] = if next[axis] > at[axis] { at[axis] + 1 } else { at[axis] - 1 };
            cells.push(at);
        }
    }
    let mut corridor_path: Vec<String> = Vec::new();
    for cell in &cells {
        let center = grid.cell_center(grid.flat_index(*cell))?;
        if let Some(corridor) = plan.corridor_at(&center) {
            if corridor_path.last() != Some(&corridor.id) {
                corridor_path.push(corridor.id.clone());
            }
        }
    }
    let waypoints = deduped
        .iter()
        .map(|cell| grid.cell_center(grid.flat_index(*cell)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CorridorRoute { waypoints, corridor_path })
}
