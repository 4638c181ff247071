use nalgebra::{Point3, Vector3};

use super::PointCloud;
use crate::{Error, Result};

/// Slack applied when mapping coordinates to cell indices so that points
/// sitting on a cell face (up to rounding) land in the expected cell.
const INDEX_SLACK: f64 = 1e-9;

/// Placement of a regular voxel lattice in the world.
///
/// Cell `(i, j, k)` has its center at `origin + (index + 0.5)·spacing`.
/// Linear indices are row-major with `k` varying fastest.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub origin: Vector3<f64>,
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl GridGeometry {
    pub fn new(origin: Vector3<f64>, spacing: f64, dims: [usize; 3]) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidParameter(format!("spacing must be positive, got {spacing}")));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidParameter(format!("grid dims must be >= 2, got {dims:?}")));
        }
        Ok(Self { origin, spacing, dims })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    #[inline]
    pub fn unlinear(&self, lin: usize) -> [usize; 3] {
        let k = lin % self.dims[2];
        let rest = lin / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], k]
    }

    pub fn cell_center(&self, idx: [usize; 3]) -> Point3<f64> {
        Point3::from(
            self.origin
                + Vector3::new(idx[0] as f64 + 0.5, idx[1] as f64 + 0.5, idx[2] as f64 + 0.5) * self.spacing,
        )
    }

    /// Upper corner of the grid's bounding box.
    pub fn max_corner(&self) -> Vector3<f64> {
        self.origin + Vector3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.spacing
    }

    /// Cell containing `p` using half-open `[lo, hi)` intervals, except that a
    /// point exactly on the grid's max face belongs to the last cell.
    pub fn cell_of(&self, p: &Point3<f64>) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let u = (p[a] - self.origin[a]) / self.spacing + INDEX_SLACK;
            if !(u >= 0.0) {
                return None;
            }
            let i = u.floor() as usize;
            if i < self.dims[a] {
                out[a] = i;
            } else if i == self.dims[a] && u - (i as f64) <= 2.0 * INDEX_SLACK {
                out[a] = i - 1;
            } else {
                return None;
            }
        }
        Some(out)
    }

    pub fn contains_index(&self, idx: [i64; 3]) -> bool {
        (0..3).all(|a| idx[a] >= 0 && (idx[a] as usize) < self.dims[a])
    }
}

/// Boolean voxel occupancy over a [`GridGeometry`].
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub geometry: GridGeometry,
    pub cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(geometry: GridGeometry) -> Self {
        Self { cells: vec![false; geometry.len()], geometry }
    }

    pub fn get(&self, idx: [usize; 3]) -> bool {
        self.cells[self.geometry.linear(idx)]
    }

    pub fn set(&mut self, idx: [usize; 3], value: bool) {
        let lin = self.geometry.linear(idx);
        self.cells[lin] = value;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn occupied_indices(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| self.geometry.unlinear(i))
    }

    /// Marks the cells of every in-bounds point; returns how many points fell outside.
    pub fn mark_points(&mut self, cloud: &PointCloud) -> usize {
        let mut outside = 0;
        for p in &cloud.points {
            match self.geometry.cell_of(p) {
                Some(idx) => self.set(idx, true),
                None => outside += 1,
            }
        }
        outside
    }
}

/// Voxelizes a cloud on a lattice aligned with the cloud's minimum corner and
/// inflated by `padding` cells on every side.
pub fn voxelize(c: &PointCloud, spacing: f64, padding: usize) -> Result<OccupancyGrid> {
    if !(spacing > 0.0) {
        return Err(Error::InvalidParameter(format!("spacing must be positive, got {spacing}")));
    }
    if padding < 1 {
        return Err(Error::InvalidParameter("padding must be at least one voxel".into()));
    }
    let (lo, hi) = c.aabb().ok_or(Error::EmptyInput("point cloud"))?;
    let mut dims = [0usize; 3];
    for a in 0..3 {
        dims[a] = ((hi[a] - lo[a]) / spacing + INDEX_SLACK).floor() as usize + 1 + 2 * padding;
    }
    let origin = lo.coords - Vector3::repeat(padding as f64 * spacing);
    let geometry = GridGeometry::new(origin, spacing, dims)?;
    let mut grid = OccupancyGrid::new(geometry);
    let outside = grid.mark_points(c);
    debug_assert_eq!(outside, 0);
    Ok(grid)
}
