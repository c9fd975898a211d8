//! Axis-aligned box geometry shared by the airspace grid and the corridor
//! planner.
//!
//! Two containment conventions coexist on purpose. Point membership is closed
//! (a point on a face is inside), which is the conservative choice for
//! geofence checks. Volume overlap requires positive measure, so boxes that
//! merely share a face do not count as overlapping; box subtraction produces
//! pieces that abut the removed region exactly.

use serde::{Deserialize, Serialize};

pub type Point3 = [f64; 3];

/// Axis-aligned box described by its two extreme corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Self {
        Aabb { min, max }
    }

    /// True when the box has zero or negative extent on some axis.
    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|i| self.max[i] <= self.min[i])
    }

    pub fn volume(&self) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        (0..3).map(|i| self.max[i] - self.min[i]).product()
    }

    /// Closed containment: faces, edges, and corners are inside.
    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Positive-volume overlap test; shared faces do not overlap.
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i].max(other.min[i]) < self.max[i].min(other.max[i]))
    }

    /// Overlap region, or `None` when the boxes have no positive-volume
    /// intersection.
    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for i in 0..3 {
            min[i] = self.min[i].max(other.min[i]);
            max[i] = self.max[i].min(other.max[i]);
            if min[i] >= max[i] {
                return None;
            }
        }
        Some(Aabb { min, max })
    }
}

/// Removes one hole from a box, returning the leftover pieces.
///
/// The leftovers are pairwise disjoint and tile `base` minus the hole: up to
/// two slabs along x, then two along y inside the hole's x-range, then two
/// along z inside the hole's x- and y-ranges.
fn subtract_one(base: Aabb, hole: &Aabb) -> Vec<Aabb> {
    let Some(ov) = base.intersection(hole) else {
        return vec![base];
    };
    let mut pieces = Vec::new();
    if base.min[0] < ov.min[0] {
        pieces.push(Aabb::new(base.min, [ov.min[0], base.max[1], base.max[2]]));
    }
    if ov.max[0] < base.max[0] {
        pieces.push(Aabb::new([ov.max[0], base.min[1], base.min[2]], base.max));
    }
    if base.min[1] < ov.min[1] {
        pieces.push(Aabb::new(
            [ov.min[0], base.min[1], base.min[2]],
            [ov.max[0], ov.min[1], base.max[2]],
        ));
    }
    if ov.max[1] < base.max[1] {
        pieces.push(Aabb::new(
            [ov.min[0], ov.max[1], base.min[2]],
            [ov.max[0], base.max[1], base.max[2]],
        ));
    }
    if base.min[2] < ov.min[2] {
        pieces.push(Aabb::new(
            [ov.min[0], ov.min[1], base.min[2]],
            [ov.max[0], ov.max[1], ov.min[2]],
        ));
    }
    if ov.max[2] < base.max[2] {
        pieces.push(Aabb::new(
            [ov.min[0], ov.min[1], ov.max[2]],
            [ov.max[0], ov.max[1], base.max[2]],
        ));
    }
    pieces
}

/// Subtracts every hole from `base`, returning disjoint boxes that exactly
/// cover the remaining volume. Holes are applied in the order given, so the
/// result is deterministic.
pub fn subtract_all(base: Aabb, holes: &[Aabb]) -> Vec<Aabb> {
    let mut pieces = vec![base];
    for hole in holes {
        pieces = pieces
            .into_iter()
            .flat_map(|piece| subtract_one(piece, hole))
            .collect();
    }
    pieces.retain(|p| !p.is_degenerate());
    pieces
}
