use nalgebra::{Matrix3, Rotation3, SMatrix, SVector, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{GraspConfig, HandParams, ObjectSummary};
use crate::geom::{so3, Pose3};
use crate::{Error, Result};

/// One Gaussian over `(palm offset 3, palm rotation vector 3, preshape)`,
/// with offset and rotation expressed in the object's principal frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorComponent {
    pub weight: f64,
    pub mean: SVector<f64, 7>,
    pub covariance: SMatrix<f64, 7, 7>,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraspPrior {
    components: Vec<PriorComponent>,
}

impl GraspPrior {
    /// Normalizes the component weights.
    pub fn new(mut components: Vec<PriorComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("prior components"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| !(c.weight >= 0.0)) || !(total > 0.0) {
            return Err(Error::InvalidParameter("prior weights must be non-negative with a positive sum".into()));
        }
        for c in &mut components {
            c.weight /= total;
            let sym = (c.covariance - c.covariance.transpose()).norm();
            if sym > 1e-12 || c.covariance.symmetric_eigenvalues().min() < -1e-12 {
                return Err(Error::InvalidParameter(format!("covariance of {} is not positive semidefinite", c.label)));
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[PriorComponent] {
        &self.components
    }

    /// World-frame grasp at a component-space vector.
    pub fn grasp_from_vector(o: &ObjectSummary, v: &SVector<f64, 7>, hand: &HandParams) -> GraspConfig {
        let off = Vector3::new(v[0], v[1], v[2]);
        let rv = Vector3::new(v[3], v[4], v[5]);
        let r = o.axes * so3::exp(&rv).into_inner();
        let palm = Pose3::from_rotation_matrix(o.centroid + o.axes * off, &Rotation3::from_matrix_unchecked(r));
        GraspConfig::new(palm, hand.clamp(v[6]))
    }

    /// Component-space vector of a world-frame grasp.
    pub fn vector_from_grasp(o: &ObjectSummary, g: &GraspConfig) -> SVector<f64, 7> {
        let off = o.axes.transpose() * (g.palm.translation - o.centroid);
        let r_local = o.axes.transpose() * g.palm.rotation_matrix();
        let rv = so3::log(&Rotation3::from_matrix_unchecked(r_local));
        SVector::<f64, 7>::from_column_slice(&[off.x, off.y, off.z, rv.x, rv.y, rv.z, g.preshape])
    }

    pub fn mean_grasp(&self, k: usize, o: &ObjectSummary, hand: &HandParams) -> GraspConfig {
        Self::grasp_from_vector(o, &self.components[k].mean, hand)
    }
}

/// Parameters of the two-mode default prior.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PriorSettings {
    /// Palm-to-centroid distance along the approach axis, meters.
    pub standoff: f64,
    pub position_sigma: f64,
    pub rotation_sigma: f64,
    pub preshape_sigma: f64,
    /// Robot base position; side grasps approach from the base's side.
    pub robot_base: [f64; 3],
    pub hand: HandParams,
}

impl Default for PriorSettings {
    fn default() -> Self {
        Self {
            standoff: 0.12,
            position_sigma: 0.01,
            rotation_sigma: 0.1,
            preshape_sigma: 0.05,
            robot_base: [0.0; 3],
            hand: HandParams::default(),
        }
    }
}

fn horizontal(v: &Vector3<f64>) -> Vector3<f64> {
    let h = Vector3::new(v.x, v.y, 0.0);
    if h.norm() < 1e-9 {
        Vector3::x()
    } else {
        h.normalize()
    }
}

/// Top and side grasp modes.
///
/// The top mode approaches along world −z and closes across the object's
/// minor horizontal axis. The side mode approaches along the minor
/// horizontal axis, from the robot's side, and closes along whichever of
/// vertical or the major horizontal axis is narrower. The side mode's weight
/// is proportional to the vertical half-extent and the top mode's to the mean
/// horizontal half-extent.
pub fn default_prior(o: &ObjectSummary, s: &PriorSettings) -> GraspPrior {
    let v = o.vertical_axis();
    let horiz: Vec<usize> = (0..3).filter(|&i| i != v).collect();
    // extents are sorted, so the first horizontal index is the major one
    let (major, minor) = (horiz[0], horiz[1]);
    let u_minor = horizontal(&o.axis(minor));
    let u_major = horizontal(&o.axis(major));
    let up = Vector3::z();

    let make = |a: Vector3<f64>, b: Vector3<f64>, weight: f64, label: &str| {
        let r = Matrix3::from_columns(&[a, b, a.cross(&b)]);
        let palm = Pose3::from_rotation_matrix(o.centroid - a * s.standoff, &Rotation3::from_matrix_unchecked(r));
        let q = s.hand.preshape_for(o.required_width(&b));
        let mean = GraspPrior::vector_from_grasp(o, &GraspConfig::new(palm, q));
        let mut cov = SMatrix::<f64, 7, 7>::zeros();
        for i in 0..3 {
            cov[(i, i)] = s.position_sigma * s.position_sigma;
            cov[(i + 3, i + 3)] = s.rotation_sigma * s.rotation_sigma;
        }
        cov[(6, 6)] = s.preshape_sigma * s.preshape_sigma;
        PriorComponent { weight, mean, covariance: cov, label: label.to_string() }
    };

    let top_weight = 0.5 * (o.extents[major] + o.extents[minor]);
    let side_weight = o.extents[v];
    let top = make(-up, u_minor, top_weight, "top");

    let base = Vector3::from(s.robot_base);
    let outward = o.centroid - base;
    let a_side = if u_minor.dot(&outward) >= 0.0 { u_minor } else { -u_minor };
    let b_side = if o.required_width(&up) <= o.required_width(&u_major) { up } else { u_major };
    let side = make(a_side, b_side, side_weight, "side");

    GraspPrior::new(vec![top, side]).expect("default prior is well formed")
}

fn sqrt_psd(cov: &SMatrix<f64, 7, 7>) -> SMatrix<f64, 7, 7> {
    if let Some(ch) = cov.cholesky() {
        return ch.l();
    }
    let eig = cov.symmetric_eigen();
    let d = SMatrix::<f64, 7, 7>::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    eig.eigenvectors * d
}

/// `n` draws with the index of the component each came from.
pub fn sample_prior_labeled(
    p: &GraspPrior,
    o: &ObjectSummary,
    hand: &HandParams,
    n: usize,
    seed: u64,
) -> Result<Vec<(usize, GraspConfig)>> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(p.components.iter().map(|c| c.weight))
        .map_err(|e| Error::InvalidParameter(format!("prior weights: {e}")))?;
    let roots: Vec<_> = p.components.iter().map(|c| sqrt_psd(&c.covariance)).collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let k = pick.sample(&mut rng);
        let z = SVector::<f64, 7>::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let v = p.components[k].mean + roots[k] * z;
        out.push((k, GraspPrior::grasp_from_vector(o, &v, hand)));
    }
    Ok(out)
}

pub fn sample_prior(p: &GraspPrior, o: &ObjectSummary, hand: &HandParams, n: usize, seed: u64) -> Result<Vec<GraspConfig>> {
    Ok(sample_prior_labeled(p, o, hand, n, seed)?.into_iter().map(|(_, g)| g).collect())
}
