//! Linked-cell range search over point clouds.
//!
//! A [`CellGrid`] bins particle positions into uniform cubic cells of edge
//! `cell_size`. A radius query with r ≤ cell_size then only has to visit
//! the 3×3×3 block of cells around the query point (fewer at the domain
//! boundary), giving O(1) expected cost per query at bounded density.
//!
//! Queries return a **closed** ball (d ≤ r, compared as d² ≤ r² without
//! intermediate rounding) with results sorted by particle id, so the
//! outcome is a pure function of the point set — independent of build
//! order, cell layout, and the partitioning of the cloud across workers.

use crate::error::{Error, Result};
use crate::math::{Real, Vec3};
use crate::store::ParticleId;

/// Search tuning shared by all material points of a deck.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    /// Initial support radius as a multiple of the local spacing h_p.
    pub radius_factor: Real,
    /// Minimum number of support nodes before enlargement stops.
    pub min_support: usize,
    /// Multiplicative radius growth per enlargement round.
    pub enlargement: Real,
    /// Maximum enlargement rounds before the search gives up.
    pub max_enlarge: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            radius_factor: 1.8,
            min_support: 8,
            enlargement: 1.3,
            max_enlarge: 5,
        }
    }
}

/// Uniform-cell spatial index over (id, position) pairs.
#[derive(Debug, Clone)]
pub struct CellGrid {
    origin: Vec3,
    cell_size: Real,
    dims: [usize; 3],
    cells: Vec<Vec<(ParticleId, Vec3)>>,
}

impl CellGrid {
    /// Builds a grid binning `points` into cubic cells of edge `cell_size`.
    pub fn build(
        points: impl IntoIterator<Item = (ParticleId, Vec3)>,
        cell_size: Real,
    ) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::Config(format!(
                "cell size must be positive and finite, got {cell_size}"
            )));
        }
        let points: Vec<(ParticleId, Vec3)> = points.into_iter().collect();

        let mut min = Vec3::from_element(Real::INFINITY);
        let mut max = Vec3::from_element(Real::NEG_INFINITY);
        for (_, x) in &points {
            for a in 0..3 {
                min[a] = min[a].min(x[a]);
                max[a] = max[a].max(x[a]);
            }
        }
        if points.is_empty() {
            min = Vec3::zeros();
            max = Vec3::zeros();
        }

        let mut dims = [1usize; 3];
        for a in 0..3 {
            let extent = max[a] - min[a];
            dims[a] = ((extent / cell_size).floor() as usize + 1).max(1);
        }
        let mut grid = CellGrid {
            origin: min,
            cell_size,
            dims,
            cells: vec![Vec::new(); dims[0] * dims[1] * dims[2]],
        };
        for (id, x) in points {
            let idx = grid.cell_index(&x);
            grid.cells[idx].push((id, x));
        }
        Ok(grid)
    }

    pub fn cell_size(&self) -> Real {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(Vec::is_empty)
    }

    fn axis_cell(&self, coord: Real, axis: usize) -> usize {
        let raw = ((coord - self.origin[axis]) / self.cell_size).floor();
        if raw < 0.0 {
            0
        } else {
            (raw as usize).min(self.dims[axis] - 1)
        }
    }

    fn cell_index(&self, x: &Vec3) -> usize {
        let ix = self.axis_cell(x[0], 0);
        let iy = self.axis_cell(x[1], 1);
        let iz = self.axis_cell(x[2], 2);
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    /// All particles with ‖x − center‖ ≤ radius (closed ball), sorted by
    /// ascending id. Requires radius ≤ cell_size so the 3×3×3 cell block
    /// around the center is guaranteed to cover the ball.
    pub fn query_radius(&self, center: &Vec3, radius: Real) -> Result<Vec<(ParticleId, Vec3)>> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::Config(format!(
                "query radius must be non-negative and finite, got {radius}"
            )));
        }
        if radius > self.cell_size {
            return Err(Error::RadiusExceedsCell {
                radius,
                cell_size: self.cell_size,
            });
        }
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            lo[a] = self.axis_cell(center[a] - radius, a);
            hi[a] = self.axis_cell(center[a] + radius, a);
        }
        let r2 = radius * radius;
        let mut out = Vec::new();
        for iz in lo[2]..=hi[2] {
            for iy in lo[1]..=hi[1] {
                for ix in lo[0]..=hi[0] {
                    let cell = &self.cells[ix + self.dims[0] * (iy + self.dims[1] * iz)];
                    for (id, x) in cell {
                        if (x - center).norm_squared() <= r2 {
                            out.push((*id, *x));
                        }
                    }
                }
            }
        }
        out.sort_unstable_by_key(|(id, _)| *id);
        Ok(out)
    }
}

/// Characteristic spacing at `center`: the distance to the nearest distinct
/// neighbor. Neighbors coincident with the center are skipped; if every
/// neighbor coincides (or the list is empty) the support is degenerate.
pub fn nearest_spacing(center: &Vec3, neighbors: &[(ParticleId, Vec3)]) -> Result<Real> {
    let mut best = Real::INFINITY;
    for (_, x) in neighbors {
        let d = (x - center).norm();
        if d > 0.0 && d < best {
            best = d;
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::DegenerateSupport)
    }
}
