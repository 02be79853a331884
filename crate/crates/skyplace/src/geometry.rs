//! Axis-aligned geometry: the service region, rectangular buildings, and the
//! two lattices derived from them (the voxel grid carrying per-voxel
//! absorption and the flight grid of candidate aerial positions).
//!
//! Conventions used throughout the crate:
//!
//! * Points are `[x, y, z]` in metres, `z` up, ground at `z = 0`.
//! * Voxel grids are described by [`Grid3`]: the point of voxel index
//!   `(i, j, k)` is `origin + (i, j, k) ⊙ spacing`, and voxel `(i, j, k)`
//!   covers the half-open box centred on that point. Linear indices run
//!   x-fastest, then y, then z.
//! * Buildings are axis-aligned boxes rising from the ground plane: a point
//!   is inside a building iff it lies in the closed x/y footprint and
//!   `0 ≤ z < height`. The roof plane itself is outside.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or displacement in 3-space, metres.
pub type Point3 = [f64; 3];

/// Euclidean norm of a displacement.
pub fn norm(v: Point3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Component-wise difference `a - b`.
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Euclidean distance between two points.
pub fn dist(a: Point3, b: Point3) -> f64 {
    norm(sub(a, b))
}

/// Axis-aligned service region: a box given by its minimum corner and its
/// (strictly positive) extent along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// Minimum corner `[x, y, z]` in metres.
    pub min: Point3,
    /// Extent `[dx, dy, dz]` in metres; every component must be positive.
    pub size: Point3,
}

impl Region {
    /// Validates the extents and returns the region.
    pub fn new(min: Point3, size: Point3) -> Result<Self> {
        let r = Region { min, size };
        r.validate()?;
        Ok(r)
    }

    /// Checks that all coordinates are finite and all extents positive.
    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !self.min[a].is_finite() || !self.size[a].is_finite() {
                return Err(Error::Invalid("region coordinates must be finite".into()));
            }
            if self.size[a] <= 0.0 {
                return Err(Error::Invalid(format!(
                    "region extent along axis {a} must be positive, got {}",
                    self.size[a]
                )));
            }
        }
        Ok(())
    }

    /// Maximum corner of the box.
    pub fn max(&self) -> Point3 {
        [
            self.min[0] + self.size[0],
            self.min[1] + self.size[1],
            self.min[2] + self.size[2],
        ]
    }
}

/// Rectangular building rising from the ground plane `z = 0`.
///
/// The footprint is the closed rectangle `x_interval × y_interval`; the
/// occupied volume is the footprint extruded over `0 ≤ z < height`, so points
/// exactly on the roof plane are *outside* while points on the footprint
/// boundary are *inside*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    /// Closed `[lo, hi]` interval occupied along x, metres.
    pub x_interval: [f64; 2],
    /// Closed `[lo, hi]` interval occupied along y, metres.
    pub y_interval: [f64; 2],
    /// Roof height above the ground plane, metres; must be positive.
    pub height: f64,
    /// Absorption of the building material in dB per metre; must be
    /// non-negative.
    pub absorption_db_per_m: f64,
}

impl Building {
    /// Checks interval ordering, positive height and non-negative absorption.
    pub fn validate(&self) -> Result<()> {
        let ok = self.x_interval[0].is_finite()
            && self.x_interval[1].is_finite()
            && self.y_interval[0].is_finite()
            && self.y_interval[1].is_finite()
            && self.x_interval[0] <= self.x_interval[1]
            && self.y_interval[0] <= self.y_interval[1];
        if !ok {
            return Err(Error::Invalid(
                "building footprint intervals must be finite and ordered".into(),
            ));
        }
        if !(self.height > 0.0 && self.height.is_finite()) {
            return Err(Error::Invalid(format!(
                "building height must be positive, got {}",
                self.height
            )));
        }
        if !(self.absorption_db_per_m >= 0.0 && self.absorption_db_per_m.is_finite()) {
            return Err(Error::Invalid(format!(
                "building absorption must be non-negative, got {}",
                self.absorption_db_per_m
            )));
        }
        Ok(())
    }

    /// True when `(x, y)` lies in the closed footprint rectangle.
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        self.x_interval[0] <= x
            && x <= self.x_interval[1]
            && self.y_interval[0] <= y
            && y <= self.y_interval[1]
    }

    /// True when the point lies inside the occupied volume
    /// (closed footprint, `0 ≤ z < height`).
    pub fn contains(&self, p: Point3) -> bool {
        self.footprint_contains(p[0], p[1]) && p[2] >= 0.0 && p[2] < self.height
    }
}

/// A rectilinear lattice of points: point `(i, j, k)` sits at
/// `origin + (i, j, k) ⊙ spacing`. When the lattice describes voxels, voxel
/// `(i, j, k)` is the half-open box of one `spacing` centred on its point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    /// Location of point `(0, 0, 0)`, metres.
    pub origin: Point3,
    /// Lattice pitch along each axis, metres; every component positive.
    pub spacing: Point3,
    /// Number of points along each axis; every component at least 1.
    pub dims: [usize; 3],
}

impl Grid3 {
    /// Validates spacing and dimensions and returns the grid.
    pub fn new(origin: Point3, spacing: Point3, dims: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if !origin[a].is_finite() || !spacing[a].is_finite() || spacing[a] <= 0.0 {
                return Err(Error::Invalid(format!(
                    "grid spacing along axis {a} must be finite and positive, got {}",
                    spacing[a]
                )));
            }
            if dims[a] == 0 {
                return Err(Error::Invalid(format!(
                    "grid must have at least one point along axis {a}"
                )));
            }
        }
        Ok(Grid3 {
            origin,
            spacing,
            dims,
        })
    }

    /// Total number of lattice points.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// True when the grid has no points (never, for a validated grid).
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index of `(i, j, k)` with x running fastest, then y, then z.
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Inverse of [`Grid3::linear_index`].
    pub fn unravel(&self, g: usize) -> (usize, usize, usize) {
        let i = g % self.dims[0];
        let j = (g / self.dims[0]) % self.dims[1];
        let k = g / (self.dims[0] * self.dims[1]);
        (i, j, k)
    }

    /// Point of lattice index `(i, j, k)`; the indices must be in range.
    pub fn point(&self, i: usize, j: usize, k: usize) -> Result<Point3> {
        if i >= self.dims[0] || j >= self.dims[1] || k >= self.dims[2] {
            return Err(Error::Invalid(format!(
                "grid index ({i}, {j}, {k}) out of range for dims {:?}",
                self.dims
            )));
        }
        Ok([
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ])
    }
}

/// Point of lattice index `(i, j, k)` on `grid`; errs when out of range.
pub fn grid_point(grid: &Grid3, i: usize, j: usize, k: usize) -> Result<Point3> {
    grid.point(i, j, k)
}

/// Builds the candidate flight grid: a corner-inclusive lattice of
/// `dims = [nx, ny, nz]` points spanning `region`, keeping only points at or
/// above `min_height` metres that do not lie inside any building.
///
/// The lattice pitch along an axis with `n > 1` points is `extent / (n - 1)`
/// so the region faces are included; an axis with a single point collapses to
/// the region's minimum coordinate on that axis. Points are returned in
/// x-fastest order. An empty result is an error: such a grid admits no
/// placement at all.
pub fn build_flight_grid(
    region: &Region,
    dims: [usize; 3],
    min_height: f64,
    buildings: &[Building],
) -> Result<Vec<Point3>> {
    region.validate()?;
    for b in buildings {
        b.validate()?;
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Invalid(format!(
            "flight grid dims must all be at least 1, got {dims:?}"
        )));
    }
    if !min_height.is_finite() {
        return Err(Error::Invalid("minimum flight height must be finite".into()));
    }

    let step = |a: usize| {
        if dims[a] > 1 {
            region.size[a] / (dims[a] - 1) as f64
        } else {
            0.0
        }
    };
    let steps = [step(0), step(1), step(2)];

    let mut points = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = [
                    region.min[0] + i as f64 * steps[0],
                    region.min[1] + j as f64 * steps[1],
                    region.min[2] + k as f64 * steps[2],
                ];
                if p[2] < min_height {
                    continue;
                }
                if buildings.iter().any(|b| b.contains(p)) {
                    continue;
                }
                points.push(p);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyFlightGrid);
    }
    Ok(points)
}

/// The voxel grid whose boxes partition `region` exactly into
/// `dims = [qx, qy, qz]` voxels: pitch is `extent / q` per axis and the grid
/// origin (first voxel centre) sits half a voxel inside the region's minimum
/// corner.
pub fn voxel_grid_over(region: &Region, dims: [usize; 3]) -> Result<Grid3> {
    region.validate()?;
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Invalid(format!(
            "voxel grid dims must all be at least 1, got {dims:?}"
        )));
    }
    let spacing = [
        region.size[0] / dims[0] as f64,
        region.size[1] / dims[1] as f64,
        region.size[2] / dims[2] as f64,
    ];
    let origin = [
        region.min[0] + spacing[0] / 2.0,
        region.min[1] + spacing[1] / 2.0,
        region.min[2] + spacing[2] / 2.0,
    ];
    Grid3::new(origin, spacing, dims)
}

/// Rasterises the buildings onto the voxel grid: a voxel's absorption is the
/// maximum `absorption_db_per_m` over all buildings containing its centre,
/// and `0` when no building does.
pub fn voxelize_slf(
    buildings: &[Building],
    grid: &Grid3,
) -> Result<crate::propagation::SpatialLossField> {
    for b in buildings {
        b.validate()?;
    }
    let dims = grid.dims;
    let mut tensor = Array3::<f64>::zeros(dims);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let c = grid.point(i, j, k)?;
                let mut loss = 0.0f64;
                for b in buildings {
                    if b.contains(c) {
                        loss = loss.max(b.absorption_db_per_m);
                    }
                }
                tensor[[i, j, k]] = loss;
            }
        }
    }
    crate::propagation::SpatialLossField::new(*grid, tensor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_point_is_affine_in_the_index() {
        let grid = Grid3::new([0.0, 0.0, 0.0], [10.0, 10.0, 5.0], [4, 4, 4]).unwrap();
        assert_eq!(grid_point(&grid, 2, 1, 3).unwrap(), [20.0, 10.0, 15.0]);
        assert_eq!(grid_point(&grid, 0, 0, 0).unwrap(), [0.0, 0.0, 0.0]);
        assert!(grid_point(&grid, 4, 0, 0).is_err());
    }

    #[test]
    fn linear_indexing_runs_x_fastest_and_round_trips() {
        let grid = Grid3::new([0.0; 3], [1.0; 3], [3, 4, 5]).unwrap();
        let mut seen = vec![false; grid.len()];
        let mut expected = 0;
        for k in 0..5 {
            for j in 0..4 {
                for i in 0..3 {
                    let g = grid.linear_index(i, j, k);
                    assert_eq!(g, expected, "x-fastest ordering");
                    assert_eq!(grid.unravel(g), (i, j, k));
                    assert!(!seen[g]);
                    seen[g] = true;
                    expected += 1;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn flight_grid_removes_low_and_occupied_points() {
        // A 2 x 2 x 3 lattice over a 100 x 100 x 90 box has z-levels
        // {0, 45, 90}. The height floor removes z = 0; a full-footprint
        // building of height 60 swallows the z = 45 layer (footprints are
        // closed, so the lattice corners count as inside), leaving the four
        // corners of the top face.
        let region = Region::new([0.0, 0.0, 0.0], [100.0, 100.0, 90.0]).unwrap();
        let building = Building {
            x_interval: [0.0, 100.0],
            y_interval: [0.0, 100.0],
            height: 60.0,
            absorption_db_per_m: 1.0,
        };
        let pts = build_flight_grid(&region, [2, 2, 3], 40.0, &[building]).unwrap();
        assert_eq!(pts.len(), 4);
        assert!(pts.iter().all(|p| p[2] == 90.0));
        // x-fastest ordering of the survivors.
        assert_eq!(pts[0], [0.0, 0.0, 90.0]);
        assert_eq!(pts[1], [100.0, 0.0, 90.0]);
        assert_eq!(pts[2], [0.0, 100.0, 90.0]);
        assert_eq!(pts[3], [100.0, 100.0, 90.0]);
    }

    #[test]
    fn flight_grid_single_point_axis_collapses_to_min_corner() {
        let region = Region::new([10.0, 20.0, 0.0], [100.0, 100.0, 90.0]).unwrap();
        let pts = build_flight_grid(&region, [1, 1, 2], 0.0, &[]).unwrap();
        assert_eq!(pts, vec![[10.0, 20.0, 0.0], [10.0, 20.0, 90.0]]);
    }

    #[test]
    fn flight_grid_errors_when_everything_is_filtered() {
        let region = Region::new([0.0; 3], [10.0, 10.0, 10.0]).unwrap();
        let err = build_flight_grid(&region, [2, 2, 2], 1000.0, &[]).unwrap_err();
        assert!(matches!(err, Error::EmptyFlightGrid));
    }

    #[test]
    fn roof_plane_is_outside_the_building() {
        let b = Building {
            x_interval: [0.0, 10.0],
            y_interval: [0.0, 10.0],
            height: 60.0,
            absorption_db_per_m: 1.0,
        };
        assert!(b.contains([0.0, 0.0, 59.999]));
        assert!(b.contains([10.0, 10.0, 0.0]));
        assert!(!b.contains([5.0, 5.0, 60.0]));
        assert!(!b.contains([5.0, 5.0, -0.001]));
        assert!(!b.contains([10.001, 5.0, 5.0]));
    }

    #[test]
    fn voxel_grid_tiles_the_region_with_centres() {
        let region = Region::new([0.0; 3], [20.0, 10.0, 10.0]).unwrap();
        let grid = voxel_grid_over(&region, [2, 1, 1]).unwrap();
        assert_eq!(grid.origin, [5.0, 5.0, 5.0]);
        assert_eq!(grid.spacing, [10.0, 10.0, 10.0]);
    }

    #[test]
    fn voxelize_marks_centres_inside_buildings_and_takes_overlap_max() {
        // Two voxels along x with centres at x = 5 and x = 15. The first
        // building covers only the first centre; the second overlaps it with
        // a higher absorption, which must win.
        let region = Region::new([0.0; 3], [20.0, 10.0, 10.0]).unwrap();
        let weak = Building {
            x_interval: [0.0, 10.0],
            y_interval: [0.0, 10.0],
            height: 10.0,
            absorption_db_per_m: 1.0,
        };
        let strong = Building {
            x_interval: [0.0, 6.0],
            y_interval: [0.0, 10.0],
            height: 10.0,
            absorption_db_per_m: 2.5,
        };
        let grid = voxel_grid_over(&region, [2, 1, 1]).unwrap();
        let slf = voxelize_slf(&[weak, strong], &grid).unwrap();
        assert_eq!(slf.value(0, 0, 0), 2.5);
        assert_eq!(slf.value(1, 0, 0), 0.0);
    }

    #[test]
    fn voxelize_is_zero_without_buildings() {
        let region = Region::new([0.0; 3], [50.0, 40.0, 15.0]).unwrap();
        let grid = voxel_grid_over(&region, [5, 4, 3]).unwrap();
        let slf = voxelize_slf(&[], &grid).unwrap();
        assert_eq!(slf.grid.dims, [5, 4, 3]);
        assert!(slf.tensor().iter().all(|&v| v == 0.0));
    }
}
