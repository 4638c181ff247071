use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::{SdfSample, TruncatedSdf};
use crate::geom::{PointCloud, Pose3};
use crate::{Error, Result};

/// Which gradient a continuous query reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Trilinear interpolation of the stored per-voxel filter gradients.
    #[default]
    Filtered,
    /// Exact derivative of the trilinearly interpolated distance.
    Interpolant,
}

/// Points queried for one placement, expressed in the object frame.
///
/// Robot geometry is given as sphere centers with radii; a sphere's
/// effective clearance is the field value at its center minus its radius.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CollisionQuerySet {
    pub object: PointCloud,
    pub robot: PointCloud,
    pub robot_radii: Vec<f64>,
}

impl CollisionQuerySet {
    pub fn len(&self) -> usize {
        self.object.len() + self.robot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The minimizing point of one query set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMin {
    /// Clearance, already reduced by the sphere radius for robot points.
    pub distance: f64,
    pub index: usize,
    /// Queried location in the field's frame.
    pub point: Point3<f64>,
    pub gradient: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetMinimum {
    pub overall: PointMin,
    pub object: Option<PointMin>,
    pub robot: Option<PointMin>,
}

/// `ε − clearance` and its derivative with respect to the placement pose
/// (translation, then world-frame rotation increment).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Margin {
    pub residual: f64,
    pub grad_translation: Vector3<f64>,
    pub grad_rotation: Vector3<f64>,
    pub argmin: PointMin,
}

impl Margin {
    pub fn from_min(m: &PointMin, x_p: &Pose3, epsilon: f64) -> Margin {
        let lever = m.point.coords - x_p.translation;
        Margin {
            residual: epsilon - m.distance,
            grad_translation: -m.gradient,
            grad_rotation: -lever.cross(&m.gradient),
            argmin: *m,
        }
    }
}

impl TruncatedSdf {
    /// Trilinear query with a selectable gradient. Points outside the grid
    /// read `+truncation` with zero gradient.
    pub fn query_with(&self, p: &Point3<f64>, mode: GradientMode) -> SdfSample {
        let g = &self.geometry;
        let hi = g.max_corner();
        if (0..3).any(|a| !(p[a] >= g.origin[a] && p[a] <= hi[a])) {
            return SdfSample { distance: self.truncation, gradient: Vector3::zeros() };
        }
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        let mut clamped = [false; 3];
        for a in 0..3 {
            let mut u = (p[a] - g.origin[a]) / g.spacing - 0.5;
            let top = (g.dims[a] - 1) as f64;
            if u < 0.0 {
                u = 0.0;
                clamped[a] = true;
            } else if u > top {
                u = top;
                clamped[a] = true;
            }
            let i = (u.floor() as usize).min(g.dims[a] - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }

        let mut distance = 0.0;
        let mut filtered = Vector3::zeros();
        let mut deriv = Vector3::zeros();
        for corner in 0..8usize {
            let bits = [corner >> 2 & 1, corner >> 1 & 1, corner & 1];
            let idx = [base[0] + bits[0], base[1] + bits[1], base[2] + bits[2]];
            let w_axis = [
                if bits[0] == 1 { frac[0] } else { 1.0 - frac[0] },
                if bits[1] == 1 { frac[1] } else { 1.0 - frac[1] },
                if bits[2] == 1 { frac[2] } else { 1.0 - frac[2] },
            ];
            let w = w_axis[0] * w_axis[1] * w_axis[2];
            let lin = g.linear(idx);
            let d = self.distance[lin] as f64;
            distance += w * d;
            match mode {
                GradientMode::Filtered => {
                    let gr = self.gradient[lin];
                    filtered += Vector3::new(gr[0] as f64, gr[1] as f64, gr[2] as f64) * w;
                }
                GradientMode::Interpolant => {
                    for a in 0..3 {
                        if clamped[a] {
                            continue;
                        }
                        let sign = if bits[a] == 1 { 1.0 } else { -1.0 };
                        let others: f64 = (0..3).filter(|&b| b != a).map(|b| w_axis[b]).product();
                        deriv[a] += sign * others * d / g.spacing;
                    }
                }
            }
        }
        let gradient = match mode {
            GradientMode::Filtered => filtered,
            GradientMode::Interpolant => deriv,
        };
        SdfSample { distance, gradient }
    }
}

const PARALLEL_THRESHOLD: usize = 512;

fn min_over(
    s: &TruncatedSdf,
    x_p: &Pose3,
    cloud: &PointCloud,
    radii: Option<&[f64]>,
    mode: GradientMode,
) -> Option<PointMin> {
    let rot = x_p.rotation_matrix();
    let eval = |(i, q): (usize, &Point3<f64>)| {
        let point = Point3::from(rot * q.coords + x_p.translation);
        let sample = s.query_with(&point, mode);
        let r = radii.map_or(0.0, |r| r[i]);
        PointMin { distance: sample.distance - r, index: i, point, gradient: sample.gradient }
    };
    let pick = |a: PointMin, b: PointMin| {
        if (b.distance, b.index) < (a.distance, a.index) {
            b
        } else {
            a
        }
    };
    if cloud.len() >= PARALLEL_THRESHOLD {
        cloud.points.par_iter().enumerate().map(eval).reduce_with(pick)
    } else {
        cloud.points.iter().enumerate().map(eval).reduce(pick)
    }
}

/// Minimum clearance of the query set placed at `x_p`, overall and per set.
pub fn min_sdf_over_set(
    s: &TruncatedSdf,
    x_p: &Pose3,
    q: &CollisionQuerySet,
    mode: GradientMode,
) -> Result<SetMinimum> {
    if q.is_empty() {
        return Err(Error::EmptyInput("collision query set"));
    }
    if q.robot_radii.len() != q.robot.len() {
        return Err(Error::DimensionMismatch { expected: q.robot.len(), got: q.robot_radii.len() });
    }
    let object = min_over(s, x_p, &q.object, None, mode);
    let robot = min_over(s, x_p, &q.robot, Some(&q.robot_radii), mode);
    let overall = match (object, robot) {
        (Some(o), Some(r)) => {
            if r.distance < o.distance {
                r
            } else {
                o
            }
        }
        (Some(o), None) => o,
        (None, Some(r)) => r,
        (None, None) => unreachable!("non-empty set"),
    };
    Ok(SetMinimum { overall, object, robot })
}

/// Placement collision residual `ε − min clearance`; satisfied when `≤ 0`.
pub fn collision_margin(
    s: &TruncatedSdf,
    x_p: &Pose3,
    q: &CollisionQuerySet,
    epsilon: f64,
    mode: GradientMode,
) -> Result<Margin> {
    if epsilon < 0.0 {
        return Err(Error::InvalidParameter(format!("margin must be non-negative, got {epsilon}")));
    }
    let m = min_sdf_over_set(s, x_p, q, mode)?;
    Ok(Margin::from_min(&m.overall, x_p, epsilon))
}
