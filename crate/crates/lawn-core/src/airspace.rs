//! Discretized 3D airspace occupancy.
//!
//! A bounded volume is cut into an axis-aligned grid of equal cells. The
//! number of UAVs simultaneously aloft is the airspace load; per-cell
//! occupancy limits express the geometric safety cap on how many vehicles a
//! cell may hold at once.
//!
//! # Example
//!
//! ```
//! use lawn_core::airspace::{discretize, validate_state, OccupancyLimits, TrafficState};
//!
//! let grid = discretize([0.0, 0.0, 0.0], [1000.0, 1000.0, 300.0], [100.0, 100.0, 100.0])?;
//! assert_eq!(grid.total_cells(), 300);
//! let state = TrafficState::new(vec![0, 1, 2], grid.total_cells())?;
//! let limits = OccupancyLimits::uniform(grid.total_cells(), 1);
//! let report = validate_state(&state, &limits)?;
//! assert!(report.is_ok());
//! # Ok::<(), lawn_core::airspace::AirspaceError>(())
//! ```

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::geom::{Aabb, Point3};

/// Relative tolerance for deciding that an extent divides evenly into cells.
const DIVISIBILITY_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AirspaceError {
    #[error("cell size must be positive on every axis, got {0:?}")]
    NonPositiveCellSize(Point3),
    #[error("bounds are inverted or empty on axis {axis}: {min} >= {max}")]
    InvertedBounds { axis: usize, min: f64, max: f64 },
    #[error("position {0:?} lies outside the grid bounds")]
    OutOfBounds(Point3),
    #[error("cell index {index} out of range for {total} cells")]
    BadCellIndex { index: usize, total: usize },
    #[error("occupancy limits cover {limits} cells but the state was built over {cells}")]
    MismatchedCellCount { limits: usize, cells: usize },
    #[error("traffic state row {row}: {message}")]
    MalformedCsv { row: usize, message: String },
    #[error("csv io: {0}")]
    Io(#[from] std::io::Error),
}

/// Uniform axis-aligned grid over a bounded volume.
///
/// Cells are indexed row-major over (x, y, z): the z index varies fastest,
/// then y, then x.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    bounds_min: Point3,
    bounds_max: Point3,
    cell_size: Point3,
    counts: [usize; 3],
}

impl GridSpec {
    pub fn bounds_min(&self) -> Point3 {
        self.bounds_min
    }

    pub fn bounds_max(&self) -> Point3 {
        self.bounds_max
    }

    pub fn cell_size(&self) -> Point3 {
        self.cell_size
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn total_cells(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    /// Bounding box of the whole grid.
    pub fn volume(&self) -> Aabb {
        Aabb::new(self.bounds_min, self.bounds_max)
    }

    /// Flat index of the cell holding `position`.
    ///
    /// Faces between cells belong to the cell whose low face they are; the
    /// outer faces at `bounds_max` belong to the last cell on that axis, so
    /// every in-bounds point maps to exactly one cell.
    pub fn cell_of(&self, position: Point3) -> Result<usize, AirspaceError> {
        let mut idx = [0usize; 3];
        for axis in 0..3 {
            let p = position[axis];
            if p < self.bounds_min[axis] || p > self.bounds_max[axis] {
                return Err(AirspaceError::OutOfBounds(position));
            }
            let t = (p - self.bounds_min[axis]) / self.cell_size[axis];
            idx[axis] = (t.floor() as usize).min(self.counts[axis] - 1);
        }
        Ok(self.flat_index(idx))
    }

    /// Flat index from per-axis indices. Callers must stay in range.
    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.counts[1] + idx[1]) * self.counts[2] + idx[2]
    }

    /// Per-axis indices from a flat index.
    pub fn axis_indices(&self, index: usize) -> Result<[usize; 3], AirspaceError> {
        let total = self.total_cells();
        if index >= total {
            return Err(AirspaceError::BadCellIndex { index, total });
        }
        let iz = index % self.counts[2];
        let rest = index / self.counts[2];
        let iy = rest % self.counts[1];
        let ix = rest / self.counts[1];
        Ok([ix, iy, iz])
    }

    /// Geometric center of the cell at `index`.
    pub fn cell_center(&self, index: usize) -> Result<Point3, AirspaceError> {
        let idx = self.axis_indices(index)?;
        let mut center = [0.0; 3];
        for axis in 0..3 {
            center[axis] =
                self.bounds_min[axis] + (idx[axis] as f64 + 0.5) * self.cell_size[axis];
        }
        Ok(center)
    }

    /// Flat indices of every cell whose center lies inside `volume`
    /// (closed containment), in ascending index order.
    pub fn cells_with_center_in(&self, volume: &Aabb) -> Vec<usize> {
        let mut cells = Vec::new();
        for index in 0..self.total_cells() {
            let center = self.cell_center(index).expect("index in range");
            if volume.contains(&center) {
                cells.push(index);
            }
        }
        cells
    }
}

/// Builds a [`GridSpec`] from a bounding volume and a per-axis cell size.
///
/// When an extent does not divide evenly into cells (beyond a relative
/// tolerance of 1e-9), the upper bound is expanded to the next whole cell so
/// the grid always tiles its volume exactly.
pub fn discretize(
    bounds_min: Point3,
    bounds_max: Point3,
    cell_size: Point3,
) -> Result<GridSpec, AirspaceError> {
    if cell_size.iter().any(|&c| c <= 0.0 || !c.is_finite()) {
        return Err(AirspaceError::NonPositiveCellSize(cell_size));
    }
    let mut counts = [0usize; 3];
    let mut adjusted_max = [0.0; 3];
    for axis in 0..3 {
        let (lo, hi) = (bounds_min[axis], bounds_max[axis]);
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(AirspaceError::InvertedBounds { axis, min: lo, max: hi });
        }
        let ratio = (hi - lo) / cell_size[axis];
        let rounded = ratio.round();
        let n = if rounded >= 1.0 && (ratio - rounded).abs() <= DIVISIBILITY_REL_TOL * ratio.max(1.0)
        {
            rounded as usize
        } else {
            ratio.ceil().max(1.0) as usize
        };
        counts[axis] = n;
        adjusted_max[axis] = lo + n as f64 * cell_size[axis];
    }
    Ok(GridSpec {
        bounds_min,
        bounds_max: adjusted_max,
        cell_size,
        counts,
    })
}

/// Snapshot assigning each UAV to exactly one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficState {
    assignments: Vec<usize>,
    num_cells: usize,
}

impl TrafficState {
    /// Builds a state over a grid of `num_cells` cells, rejecting any
    /// assignment outside the grid.
    pub fn new(assignments: Vec<usize>, num_cells: usize) -> Result<Self, AirspaceError> {
        for &cell in &assignments {
            if cell >= num_cells {
                return Err(AirspaceError::BadCellIndex { index: cell, total: num_cells });
            }
        }
        Ok(TrafficState { assignments, num_cells })
    }

    /// Cell index per UAV, in UAV id order.
    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    /// Number of UAVs aloft; this is the airspace load the state imposes.
    pub fn k_uav(&self) -> usize {
        self.assignments.len()
    }

    /// Writes the state as CSV with header `uav_id,cell_index`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), AirspaceError> {
        writeln!(out, "uav_id,cell_index")?;
        for (uav, cell) in self.assignments.iter().enumerate() {
            writeln!(out, "{uav},{cell}")?;
        }
        Ok(())
    }

    /// Reads a state previously written by [`TrafficState::write_csv`].
    pub fn read_csv<R: BufRead>(input: R, num_cells: usize) -> Result<Self, AirspaceError> {
        let mut assignments = Vec::new();
        for (row, line) in input.lines().enumerate() {
            let line = line?;
            if row == 0 {
                if line.trim() != "uav_id,cell_index" {
                    return Err(AirspaceError::MalformedCsv {
                        row,
                        message: format!("unexpected header {line:?}"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let uav: usize = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| AirspaceError::MalformedCsv {
                    row,
                    message: "bad uav_id".into(),
                })?;
            let cell: usize = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| AirspaceError::MalformedCsv {
                    row,
                    message: "bad cell_index".into(),
                })?;
            if uav != assignments.len() {
                return Err(AirspaceError::MalformedCsv {
                    row,
                    message: format!("uav ids must be dense, expected {} got {uav}", assignments.len()),
                });
            }
            assignments.push(cell);
        }
        TrafficState::new(assignments, num_cells)
    }
}

/// Per-cell occupancy caps.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyLimits {
    per_cell: Vec<u32>,
}

impl OccupancyLimits {
    pub fn new(per_cell: Vec<u32>) -> Self {
        OccupancyLimits { per_cell }
    }

    /// The common case: every cell shares one cap. A cap of 1 means each
    /// cell holds at most one vehicle.
    pub fn uniform(num_cells: usize, cap: u32) -> Self {
        OccupancyLimits { per_cell: vec![cap; num_cells] }
    }

    pub fn num_cells(&self) -> usize {
        self.per_cell.len()
    }

    pub fn cap(&self, cell: usize) -> u32 {
        self.per_cell[cell]
    }
}

/// One cell whose occupancy exceeds its cap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyViolation {
    pub cell: usize,
    pub occupancy: u32,
    pub limit: u32,
}

/// Outcome of checking a traffic state against occupancy limits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyReport {
    /// Cells over their cap, in ascending cell order.
    pub violations: Vec<OccupancyViolation>,
}

impl OccupancyReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Number of UAVs the state carries; the airspace load equals the head count.
pub fn airspace_capacity(state: &TrafficState) -> usize {
    state.k_uav()
}

/// Checks per-cell occupancy against the limits.
pub fn validate_state(
    state: &TrafficState,
    limits: &OccupancyLimits,
) -> Result<OccupancyReport, AirspaceError> {
    if limits.num_cells() != state.num_cells() {
        return Err(AirspaceError::MismatchedCellCount {
            limits: limits.num_cells(),
            cells: state.num_cells(),
        });
    }
    let mut occupancy = vec![0u32; state.num_cells()];
    for &cell in state.assignments() {
        occupancy[cell] += 1;
    }
    let violations = occupancy
        .iter()
        .enumerate()
        .filter(|&(cell, &occ)| occ > limits.cap(cell))
        .map(|(cell, &occ)| OccupancyViolation {
            cell,
            occupancy: occ,
            limit: limits.cap(cell),
        })
        .collect();
    Ok(OccupancyReport { violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn city_grid() -> GridSpec {
        discretize([0.0, 0.0, 0.0], [1000.0, 1000.0, 300.0], [100.0, 100.0, 100.0]).unwrap()
    }

    #[test]
    fn city_block_grid_has_300_cells() {
        let grid = city_grid();
        assert_eq!(grid.counts(), [10, 10, 3]);
        assert_eq!(grid.total_cells(), 300);
        assert_eq!(grid.bounds_max(), [1000.0, 1000.0, 300.0]);
    }

    #[test]
    fn non_divisible_extent_expands_upper_bound() {
        let grid =
            discretize([0.0, 0.0, 0.0], [1050.0, 1000.0, 300.0], [100.0, 100.0, 100.0]).unwrap();
        assert_eq!(grid.counts()[0], 11);
        assert_eq!(grid.bounds_max()[0], 1100.0);
    }

    #[test]
    fn near_divisible_extent_snaps_instead_of_expanding() {
        let hi = 10.0 * 100.0 * (1.0 + 1e-12);
        let grid = discretize([0.0, 0.0, 0.0], [hi, 100.0, 100.0], [100.0, 100.0, 100.0]).unwrap();
        assert_eq!(grid.counts()[0], 10);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            discretize([0.0; 3], [1.0; 3], [0.0, 1.0, 1.0]),
            Err(AirspaceError::NonPositiveCellSize(_))
        ));
        assert!(matches!(
            discretize([0.0; 3], [0.0, 1.0, 1.0], [1.0; 3]),
            Err(AirspaceError::InvertedBounds { axis: 0, .. })
        ));
    }

    #[test]
    fn cell_of_maps_bounds_min_to_first_cell() {
        let grid = city_grid();
        assert_eq!(grid.cell_of([0.0, 0.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn cell_of_maps_bounds_max_to_last_cell() {
        let grid = city_grid();
        assert_eq!(grid.cell_of([1000.0, 1000.0, 300.0]).unwrap(), 299);
    }

    #[test]
    fn cell_of_midpoint_of_second_cell() {
        let grid = discretize([0.0, 0.0, 0.0], [200.0, 100.0, 100.0], [100.0; 3]).unwrap();
        assert_eq!(grid.cell_of([150.0, 50.0, 50.0]).unwrap(), 1);
    }

    #[test]
    fn cell_of_rejects_outside_positions() {
        let grid = city_grid();
        assert!(matches!(
            grid.cell_of([-1.0, 0.0, 0.0]),
            Err(AirspaceError::OutOfBounds(_))
        ));
        assert!(matches!(
            grid.cell_of([0.0, 0.0, 300.1]),
            Err(AirspaceError::OutOfBounds(_))
        ));
    }

    #[test]
    fn cell_center_round_trips_through_cell_of() {
        let grid = city_grid();
        for index in 0..grid.total_cells() {
            let center = grid.cell_center(index).unwrap();
            assert_eq!(grid.cell_of(center).unwrap(), index, "center of cell {index}");
        }
    }

    #[test]
    fn capacity_counts_heads() {
        let state = TrafficState::new(vec![3, 3, 7], 10).unwrap();
        assert_eq!(airspace_capacity(&state), 3);
        let empty = TrafficState::new(vec![], 10).unwrap();
        assert_eq!(airspace_capacity(&empty), 0);
    }

    #[test]
    fn traffic_state_rejects_out_of_range_cells() {
        assert!(matches!(
            TrafficState::new(vec![0, 10], 10),
            Err(AirspaceError::BadCellIndex { index: 10, total: 10 })
        ));
    }

    #[test]
    fn distinct_cells_pass_unit_limits() {
        let state = TrafficState::new(vec![0, 1, 2, 3, 4], 300).unwrap();
        let limits = OccupancyLimits::uniform(300, 1);
        assert!(validate_state(&state, &limits).unwrap().is_ok());
    }

    #[test]
    fn shared_cell_reports_violation() {
        let state = TrafficState::new(vec![5, 5, 9], 300).unwrap();
        let limits = OccupancyLimits::uniform(300, 1);
        let report = validate_state(&state, &limits).unwrap();
        assert_eq!(
            report.violations,
            vec![OccupancyViolation { cell: 5, occupancy: 2, limit: 1 }]
        );
    }

    #[test]
    fn mismatched_limits_are_rejected() {
        let state = TrafficState::new(vec![0], 300).unwrap();
        let limits = OccupancyLimits::uniform(200, 1);
        assert!(matches!(
            validate_state(&state, &limits),
            Err(AirspaceError::MismatchedCellCount { .. })
        ));
    }

    #[test]
    fn traffic_state_csv_round_trip() {
        let state = TrafficState::new(vec![4, 0, 17], 32).unwrap();
        let mut buf = Vec::new();
        state.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("uav_id,cell_index\n"));
        let back = TrafficState::read_csv(&buf[..], 32).unwrap();
        assert_eq!(back, state);
    }
}
