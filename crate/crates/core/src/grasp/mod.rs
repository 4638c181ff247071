//! Grasp success models and the grasp prior.
//!
//! A model maps a grasp configuration and an object summary to a success
//! logit `z`, with `F = σ(z)`. Gradients are taken with respect to
//! `(palm translation, world-frame palm rotation increment, preshape)`.

mod prior;
mod surrogate;
mod tabulated;

use nalgebra::{Matrix3, SVector, SymmetricEigen, Vector3};

use crate::geom::{centroid, PointCloud, Pose3};
use crate::{Error, Result};

pub use prior::{default_prior, sample_prior, sample_prior_labeled, GraspPrior, PriorComponent, PriorSettings};
pub use surrogate::{SurrogateModel, SurrogateParams};
pub use tabulated::{canonical_closing_axis, load_tabulated_model, TabAxis, TabulatedModel, GMOD_MAGIC};

/// Gradient over `(tx, ty, tz, δx, δy, δz, preshape)`.
pub type GraspGradient = SVector<f64, 7>;

/// Palm pose plus the scalar finger preshape.
///
/// The palm frame's x-axis is the approach direction and its y-axis the
/// closing direction of the fingers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraspConfig {
    pub palm: Pose3,
    pub preshape: f64,
}

impl GraspConfig {
    pub fn new(palm: Pose3, preshape: f64) -> Self {
        Self { palm, preshape }
    }

    pub fn approach(&self) -> Vector3<f64> {
        self.palm.rotation_matrix().column(0).into_owned()
    }

    pub fn closing(&self) -> Vector3<f64> {
        self.palm.rotation_matrix().column(1).into_owned()
    }
}

/// Preshape bounds and the linear preshape-to-opening map of the modeled
/// parallel gripper.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HandParams {
    pub preshape_min: f64,
    pub preshape_max: f64,
    /// Opening at `preshape = 0`, meters.
    pub opening_offset: f64,
    /// Opening gained per unit preshape, meters.
    pub opening_slope: f64,
}

impl Default for HandParams {
    fn default() -> Self {
        Self { preshape_min: 0.0, preshape_max: 1.0, opening_offset: 0.02, opening_slope: 0.08 }
    }
}

impl HandParams {
    pub fn opening(&self, preshape: f64) -> f64 {
        self.opening_offset + self.opening_slope * preshape
    }

    /// Preshape whose opening equals `width`, clamped to the bounds.
    pub fn preshape_for(&self, width: f64) -> f64 {
        ((width - self.opening_offset) / self.opening_slope).clamp(self.preshape_min, self.preshape_max)
    }

    pub fn clamp(&self, preshape: f64) -> f64 {
        preshape.clamp(self.preshape_min, self.preshape_max)
    }
}

/// Centroid, principal axes and half-extents of an object cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSummary {
    pub centroid: Vector3<f64>,
    /// Columns are the principal axes, right-handed, ordered by extent.
    pub axes: Matrix3<f64>,
    /// Half-range of the points along each axis, non-increasing.
    pub extents: Vector3<f64>,
    pub cloud: PointCloud,
}

impl ObjectSummary {
    pub fn axis(&self, i: usize) -> Vector3<f64> {
        self.axes.column(i).into_owned()
    }

    /// Width the fingers must span when closing along `b`.
    pub fn required_width(&self, b: &Vector3<f64>) -> f64 {
        2.0 * (0..3).map(|j| b.dot(&self.axis(j)).abs() * self.extents[j]).sum::<f64>()
    }

    /// Derivative of [`ObjectSummary::required_width`] with respect to a
    /// world-frame rotation increment applied to `b`.
    pub fn required_width_rot_grad(&self, b: &Vector3<f64>) -> Vector3<f64> {
        let mut g = Vector3::zeros();
        for j in 0..3 {
            let u = self.axis(j);
            let s = b.dot(&u);
            if s != 0.0 {
                g += b.cross(&u) * (2.0 * s.signum() * self.extents[j]);
            }
        }
        g
    }

    /// Index of the axis closest to world vertical.
    pub fn vertical_axis(&self) -> usize {
        (0..3).max_by(|&a, &b| self.axes[(2, a)].abs().total_cmp(&self.axes[(2, b)].abs()).then(b.cmp(&a))).unwrap()
    }
}

/// Principal-axis summary of an object cloud.
pub fn summarize_object(cloud: &PointCloud) -> Result<ObjectSummary> {
    if cloud.len() < 4 {
        return Err(Error::DegenerateGeometry(format!("need at least 4 points, got {}", cloud.len())));
    }
    let c = centroid(cloud)?;
    let mut cov = Matrix3::zeros();
    for p in &cloud.points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    cov /= cloud.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let lmax = eig.eigenvalues.max();
    if !(eig.eigenvalues.min() > 1e-10 * lmax.max(1e-300)) || lmax <= 0.0 {
        return Err(Error::DegenerateGeometry("object points are coplanar".into()));
    }

    let basis = principal_basis(&eig.eigenvalues, &eig.eigenvectors);
    let mut cols: Vec<(f64, Vector3<f64>)> = basis
        .into_iter()
        .map(|mut u| {
            // deterministic sign: largest-magnitude component positive
            let k = u.iamax();
            if u[k] < 0.0 {
                u = -u;
            }
            let (lo, hi) = cloud.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let s = (p.coords - c).dot(&u);
                (lo.min(s), hi.max(s))
            });
            (0.5 * (hi - lo), u)
        })
        .collect();
    cols.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut axes = Matrix3::from_columns(&[cols[0].1, cols[1].1, cols[2].1]);
    if axes.determinant() < 0.0 {
        let flipped = -axes.column(2);
        axes.set_column(2, &flipped);
    }
    Ok(ObjectSummary {
        centroid: c,
        axes,
        extents: Vector3::new(cols[0].0, cols[1].0, cols[2].0),
        cloud: cloud.clone(),
    })
}

/// Eigenvectors ordered by eigenvalue. Within a repeated eigenvalue the
/// basis is arbitrary, so it is replaced by the world axes projected into
/// that eigenspace.
fn principal_basis(values: &Vector3<f64>, vectors: &Matrix3<f64>) -> Vec<Vector3<f64>> {
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let tol = 1e-9 * values.max().abs();
    let mut out: Vec<Vector3<f64>> = Vec::with_capacity(3);
    let mut i = 0;
    while i < 3 {
        let mut j = i + 1;
        while j < 3 && (values[order[i]] - values[order[j]]).abs() <= tol {
            j += 1;
        }
        let span: Vec<Vector3<f64>> = order[i..j].iter().map(|&k| vectors.column(k).into_owned()).collect();
        if span.len() == 1 {
            out.push(span[0]);
        } else {
            let mut picked: Vec<Vector3<f64>> = Vec::new();
            for w in [Vector3::x(), Vector3::y(), Vector3::z()] {
                if picked.len() == span.len() {
                    break;
                }
                let mut v: Vector3<f64> = span.iter().map(|s| s * s.dot(&w)).sum();
                for q in out.iter().chain(picked.iter()) {
                    v -= q * q.dot(&v);
                }
                if v.norm() > 1e-6 {
                    picked.push(v.normalize());
                }
            }
            out.extend(picked);
        }
        i = j;
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(z)` without overflow.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// A differentiable grasp success model.
pub trait GraspModel: Send + Sync {
    /// Success logit and its gradient.
    fn logit(&self, g: &GraspConfig, o: &ObjectSummary) -> (f64, GraspGradient);

    fn hand(&self) -> &HandParams;

    fn success(&self, g: &GraspConfig, o: &ObjectSummary) -> f64 {
        sigmoid(self.logit(g, o).0)
    }

    fn gradient(&self, g: &GraspConfig, o: &ObjectSummary) -> GraspGradient {
        let (z, dz) = self.logit(g, o);
        let s = sigmoid(z);
        dz * (s * (1.0 - s))
    }

    /// `ln F` and its gradient.
    fn log_success(&self, g: &GraspConfig, o: &ObjectSummary) -> (f64, GraspGradient) {
        let (z, dz) = self.logit(g, o);
        (log_sigmoid(z), dz * sigmoid(-z))
    }
}
