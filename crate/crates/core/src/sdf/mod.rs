//! Truncated discretized signed-distance field of the placement scene.
//!
//! The field is built from a voxel occupancy grid by brushfire marching
//! outward from the occupied surface (positive distances) and inward through
//! occupied interiors (negative distances), clamped to `±truncation`.
//! Per-voxel gradients come from 1D central-difference filters along each
//! axis. Continuous queries interpolate both trilinearly.

mod brushfire;
mod io;
mod query;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::geom::{GridGeometry, OccupancyGrid, PointCloud, Pose3};
use crate::{Error, Result};
use brushfire::{march, CellBox, CellClass};

pub use query::{collision_margin, min_sdf_over_set, CollisionQuerySet, GradientMode, Margin, PointMin, SetMinimum};

/// Resolution and band width of a scene field.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SdfSettings {
    /// Voxel edge length, meters.
    pub spacing: f64,
    /// Truncation distance, meters.
    pub truncation: f64,
}

impl Default for SdfSettings {
    fn default() -> Self {
        Self { spacing: 0.01, truncation: 0.08 }
    }
}

impl SdfSettings {
    pub fn with_spacing(spacing: f64) -> Self {
        Self { spacing, truncation: 8.0 * spacing }
    }

    fn band_cells(&self) -> usize {
        (self.truncation / self.spacing).ceil() as usize
    }
}

/// Value and gradient interpolated at a continuous point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfSample {
    pub distance: f64,
    pub gradient: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedSdf {
    geometry: GridGeometry,
    distance: Vec<f32>,
    gradient: Vec<[f32; 3]>,
    truncation: f64,
    occupancy: OccupancyGrid,
}

impl TruncatedSdf {
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn spacing(&self) -> f64 {
        self.geometry.spacing
    }

    pub fn occupancy(&self) -> &OccupancyGrid {
        &self.occupancy
    }

    pub fn distances(&self) -> &[f32] {
        &self.distance
    }

    pub fn gradients(&self) -> &[[f32; 3]] {
        &self.gradient
    }

    pub fn distance_at(&self, idx: [usize; 3]) -> f64 {
        self.distance[self.geometry.linear(idx)] as f64
    }

    pub fn gradient_at(&self, idx: [usize; 3]) -> Vector3<f64> {
        let g = self.gradient[self.geometry.linear(idx)];
        Vector3::new(g[0] as f64, g[1] as f64, g[2] as f64)
    }

    /// Trilinearly interpolated distance and filtered gradient.
    pub fn query(&self, point: &Point3<f64>) -> SdfSample {
        self.query_with(point, GradientMode::Filtered)
    }

    fn band_cells(&self) -> usize {
        (self.truncation / self.geometry.spacing).ceil() as usize
    }
}

/// Builds the field of an occupancy grid.
pub fn build_sdf(occ: &OccupancyGrid, truncation: f64) -> Result<TruncatedSdf> {
    let spacing = occ.geometry.spacing;
    if !(truncation >= 2.0 * spacing) {
        return Err(Error::InvalidParameter(format!(
            "truncation {truncation} must be at least twice the spacing {spacing}"
        )));
    }
    if occ.occupied_count() == 0 {
        return Err(Error::EmptyScene);
    }
    let n = occ.geometry.len();
    let mut sdf = TruncatedSdf {
        geometry: occ.geometry,
        distance: vec![truncation as f32; n],
        gradient: vec![[0.0; 3]; n],
        truncation,
        occupancy: occ.clone(),
    };
    let full = CellBox::full(occ.geometry.dims);
    let has_surface = full.iter().any(|idx| brushfire::classify(occ, idx) == CellClass::Surface);
    if !has_surface {
        return Err(Error::DegenerateGeometry("occupancy has no free neighbor to march from".into()));
    }
    sdf.march_region(full, full);
    sdf.compute_gradients_in(full);
    Ok(sdf)
}

/// Voxelizes a scene cloud with enough padding to hold the full band and
/// builds its field.
pub fn build_scene_sdf(cloud: &PointCloud, settings: &SdfSettings) -> Result<TruncatedSdf> {
    let grid = crate::geom::voxelize(cloud, settings.spacing, settings.band_cells() + 2)?;
    build_sdf(&grid, settings.truncation)
}

/// Recomputes per-voxel gradients of `s` from its distances.
pub fn compute_gradients(s: &TruncatedSdf) -> TruncatedSdf {
    let mut out = s.clone();
    out.compute_gradients_in(CellBox::full(s.geometry.dims));
    out
}

impl TruncatedSdf {
    /// Re-marches `window` and writes distances for the cells of `target`
    /// (which must lie inside `window`).
    fn march_region(&mut self, window: CellBox, target: CellBox) {
        let band = self.truncation / self.geometry.spacing;
        let max_sq = (band * band).floor() as u32;
        let marched = march(&self.occupancy, window, max_sq);
        let wd = window.dims();
        let (spacing, trunc) = (self.geometry.spacing, self.truncation);
        for idx in target.iter() {
            let l = ((idx[0] - window.lo[0]) * wd[1] + (idx[1] - window.lo[1])) * wd[2] + (idx[2] - window.lo[2]);
            let (class, sq) = marched[l];
            let d = match (class, sq) {
                (CellClass::Surface, _) => 0.0,
                (CellClass::Free, Some(sq)) => ((sq as f64).sqrt() * spacing).min(trunc),
                (CellClass::Free, None) => trunc,
                (CellClass::Interior, Some(sq)) => -((sq as f64).sqrt() * spacing).min(trunc),
                (CellClass::Interior, None) => -trunc,
            };
            let lin = self.geometry.linear(idx);
            self.distance[lin] = d as f32;
        }
    }

    fn compute_gradients_in(&mut self, region: CellBox) {
        let g = self.geometry;
        let dims = g.dims;
        let dist = &self.distance;
        let grads: Vec<(usize, [f32; 3])> = region
            .iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&idx| {
                let mut out = [0f32; 3];
                for a in 0..3 {
                    let mut lo = idx;
                    let mut hi = idx;
                    let mut h = 0.0;
                    if idx[a] > 0 {
                        lo[a] -= 1;
                        h += g.spacing;
                    }
                    if idx[a] + 1 < dims[a] {
                        hi[a] += 1;
                        h += g.spacing;
                    }
                    let diff = dist[g.linear(hi)] as f64 - dist[g.linear(lo)] as f64;
                    out[a] = (diff / h) as f32;
                }
                (g.linear(idx), out)
            })
            .collect();
        for (lin, v) in grads {
            self.gradient[lin] = v;
        }
    }
}

/// Fuses a placed object's cloud into the field's occupancy and updates the
/// distances near the newly occupied cells.
///
/// Only cells within the band of a changed cell are re-marched. When the
/// transformed cloud leaves the grid, the lattice is grown (keeping its
/// alignment) and the field is rebuilt on the larger grid.
pub fn update_sdf(s: &TruncatedSdf, placed_object: &PointCloud, at: &Pose3) -> Result<TruncatedSdf> {
    if placed_object.is_empty() {
        return Err(Error::EmptyInput("placed object cloud"));
    }
    let moved = placed_object.transformed(at);
    let g = s.geometry;

    if moved.points.iter().any(|p| g.cell_of(p).is_none()) {
        let grown = grow_geometry(&g, &moved, s.band_cells() + 2)?;
        let mut occ = OccupancyGrid::new(grown);
        let shift = index_shift(&g, &grown);
        for idx in s.occupancy.occupied_indices() {
            occ.set([idx[0] + shift[0], idx[1] + shift[1], idx[2] + shift[2]], true);
        }
        occ.mark_points(&moved);
        return build_sdf(&occ, s.truncation);
    }

    let mut out = s.clone();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut changed = false;
    for p in &moved.points {
        let idx = g.cell_of(p).expect("checked in bounds");
        if !out.occupancy.get(idx) {
            out.occupancy.set(idx, true);
            changed = true;
            for a in 0..3 {
                lo[a] = lo[a].min(idx[a]);
                hi[a] = hi[a].max(idx[a] + 1);
            }
        }
    }
    if !changed {
        return Ok(out);
    }
    let reach = s.band_cells() + 1;
    let target = CellBox { lo, hi }.dilate(reach, g.dims);
    let window = target.dilate(reach, g.dims);
    out.march_region(window, target);
    out.compute_gradients_in(target.dilate(1, g.dims));
    Ok(out)
}

fn grow_geometry(g: &GridGeometry, cloud: &PointCloud, pad: usize) -> Result<GridGeometry> {
    let (lo, hi) = cloud.aabb().ok_or(Error::EmptyInput("placed object cloud"))?;
    let s = g.spacing;
    let mut lo_cells = [0i64; 3];
    let mut hi_cells = [0i64; 3];
    for a in 0..3 {
        let l = ((lo[a] - g.origin[a]) / s).floor() as i64 - pad as i64;
        let h = ((hi[a] - g.origin[a]) / s).floor() as i64 + 1 + pad as i64;
        lo_cells[a] = l.min(0);
        hi_cells[a] = h.max(g.dims[a] as i64);
    }
    let origin = g.origin + Vector3::new(lo_cells[0] as f64, lo_cells[1] as f64, lo_cells[2] as f64) * s;
    let dims = [
        (hi_cells[0] - lo_cells[0]) as usize,
        (hi_cells[1] - lo_cells[1]) as usize,
        (hi_cells[2] - lo_cells[2]) as usize,
    ];
    GridGeometry::new(origin, s, dims)
}

/// Index offset of `old`'s cells inside `grown` (grown lattice is aligned).
fn index_shift(old: &GridGeometry, grown: &GridGeometry) -> [usize; 3] {
    let mut out = [0usize; 3];
    for a in 0..3 {
        out[a] = ((old.origin[a] - grown.origin[a]) / old.spacing).round() as usize;
    }
    out
}

/// Occupancy of several clouds on a fixed lattice; points outside are dropped.
pub fn occupancy_from_points(geometry: GridGeometry, clouds: &[&PointCloud]) -> OccupancyGrid {
    let mut occ = OccupancyGrid::new(geometry);
    for c in clouds {
        occ.mark_points(c);
    }
    occ
}

#[cfg(test)]
mod tests;
