//! Serial-arm kinematics and the hand/wrist sphere model.

mod file;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Point3, Rotation3, Vector3, Vector6};

use crate::geom::{so3, PointCloud, Pose3};
use crate::grasp::GraspConfig;
use crate::sdf::CollisionQuerySet;
use crate::{Error, Result};

pub use file::{load_arm_file, parse_arm_file, ArmDescription};

/// A revolute joint: a fixed transform from the previous frame, then a
/// rotation about `axis` (in the joint's own frame).
#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub origin: Pose3,
    pub axis: Vector3<f64>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmModel {
    pub base: Pose3,
    pub joints: Vec<Joint>,
    /// Flange-to-palm transform.
    pub tool: Pose3,
}

/// World-frame joint axes and origins along with the end pose.
struct Chain {
    end: Pose3,
    axes: Vec<Vector3<f64>>,
    origins: Vec<Vector3<f64>>,
}

impl ArmModel {
    pub fn new(base: Pose3, joints: Vec<Joint>, tool: Pose3) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::EmptyInput("arm joints"));
        }
        for (i, j) in joints.iter().enumerate() {
            if !(j.lower < j.upper) {
                return Err(Error::InvalidParameter(format!("joint {i}: lower limit must be below upper")));
            }
            if !(j.axis.norm() > 1e-9) {
                return Err(Error::InvalidParameter(format!("joint {i}: zero axis")));
            }
        }
        let joints = joints.into_iter().map(|j| Joint { axis: j.axis.normalize(), ..j }).collect();
        Ok(Self { base, joints, tool })
    }

    /// The bundled 7-joint arm, base at the world origin. Its palm x-axis is
    /// the flange z-axis.
    pub fn bundled() -> Self {
        let z = Vector3::z();
        let y = Vector3::y();
        let at = |h: f64| Pose3::from_translation(Vector3::new(0.0, 0.0, h));
        let j = |origin: Pose3, axis: Vector3<f64>, lim: f64| Joint { origin, axis, lower: -lim, upper: lim };
        let joints = vec![
            j(at(0.333), z, 2.96),
            j(at(0.0), y, 2.09),
            j(at(0.316), z, 2.96),
            j(at(0.0), y, 2.09),
            j(at(0.384), z, 2.96),
            j(at(0.0), y, 2.09),
            j(at(0.107), z, 3.05),
        ];
        let tool = Pose3::from_rotation_matrix(
            Vector3::new(0.0, 0.0, 0.10),
            &Rotation3::from_axis_angle(&Vector3::y_axis(), -std::f64::consts::FRAC_PI_2),
        );
        Self::new(Pose3::identity(), joints, tool).expect("bundled arm is valid")
    }

    /// Two revolute joints about z with unit links along x.
    pub fn planar_two_link() -> Self {
        let joint = |x: f64| Joint {
            origin: Pose3::from_translation(Vector3::new(x, 0.0, 0.0)),
            axis: Vector3::z(),
            lower: -10.0,
            upper: 10.0,
        };
        Self::new(
            Pose3::identity(),
            vec![joint(0.0), joint(1.0)],
            Pose3::from_translation(Vector3::new(1.0, 0.0, 0.0)),
        )
        .expect("test arm is valid")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn lower(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.lower))
    }

    pub fn upper(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.upper))
    }

    fn check_dim(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch { expected: self.dof(), got: q.len() });
        }
        Ok(())
    }

    fn chain(&self, q: &[f64]) -> Chain {
        let mut t = self.base;
        let mut axes = Vec::with_capacity(q.len());
        let mut origins = Vec::with_capacity(q.len());
        for (j, &qi) in self.joints.iter().zip(q) {
            t = t.compose(&j.origin);
            axes.push(t.transform_vector(&j.axis));
            origins.push(t.translation);
            let rot = nalgebra::UnitQuaternion::from_scaled_axis(j.axis * qi);
            t = t.compose(&Pose3::from_parts(Vector3::zeros(), rot));
        }
        Chain { end: t.compose(&self.tool), axes, origins }
    }

    /// Palm pose at joint vector `q`.
    pub fn fk(&self, q: &[f64]) -> Result<Pose3> {
        self.check_dim(q)?;
        Ok(self.chain(q).end)
    }

    /// Palm pose and its geometric Jacobian (rows: linear velocity, then
    /// world angular velocity).
    pub fn fk_jacobian(&self, q: &[f64]) -> Result<(Pose3, DMatrix<f64>)> {
        self.check_dim(q)?;
        let c = self.chain(q);
        let p = c.end.translation;
        let mut jac = DMatrix::zeros(6, q.len());
        for i in 0..q.len() {
            let lin = c.axes[i].cross(&(p - c.origins[i]));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&c.axes[i]);
        }
        Ok((c.end, jac))
    }

    /// `pose_error(fk(q), target)` and its Jacobian with respect to `q`.
    pub fn fk_residual(&self, q: &[f64], target: &Pose3) -> Result<(Vector6<f64>, DMatrix<f64>)> {
        let (pose, jac) = self.fk_jacobian(q)?;
        let (e, d) = pose_error(&pose, target);
        let m = d.wrt_a * jac;
        Ok((e, DMatrix::from_column_slice(6, q.len(), m.as_slice())))
    }

    /// Projection onto the joint limits.
    pub fn clamp_joints(&self, q: &[f64]) -> Vec<f64> {
        q.iter().zip(&self.joints).map(|(&v, j)| v.clamp(j.lower, j.upper)).collect()
    }

    /// Damped least-squares inverse kinematics from each seed in turn.
    /// Returns the first solution with residual norm `≤ tol`.
    pub fn solve_ik(&self, target: &Pose3, seeds: &[Vec<f64>], settings: &IkSettings) -> Option<Vec<f64>> {
        seeds.iter().find_map(|seed| {
            let (q, err) = self.dls(target, seed, settings);
            (err <= settings.tolerance).then_some(q)
        })
    }

    /// Runs damped least squares from `seed`, returning the final joints and
    /// residual norm.
    pub fn dls(&self, target: &Pose3, seed: &[f64], s: &IkSettings) -> (Vec<f64>, f64) {
        let mut q = self.clamp_joints(seed);
        let lambda2 = s.damping * s.damping;
        let mut err = f64::INFINITY;
        for _ in 0..s.max_iterations {
            let (e, jac) = match self.fk_residual(&q, target) {
                Ok(v) => v,
                Err(_) => return (q, f64::INFINITY),
            };
            err = e.norm();
            if err <= s.tolerance {
                break;
            }
            let jjt = &jac * jac.transpose() + DMatrix::identity(6, 6) * lambda2;
            let Some(sol) = jjt.lu().solve(&DVector::from_column_slice(e.as_slice())) else {
                break;
            };
            let step = jac.transpose() * sol;
            let scale = (s.max_step / step.norm().max(1e-300)).min(1.0);
            let next: Vec<f64> = q.iter().zip(step.iter()).map(|(v, d)| v - scale * d).collect();
            q = self.clamp_joints(&next);
        }
        if err > s.tolerance {
            err = self.fk(&q).map(|p| pose_error(&p, target).0.norm()).unwrap_or(f64::INFINITY);
        }
        (q, err)
    }

    /// Seed postures facing a target position.
    pub fn ik_seeds(&self, target: &Vector3<f64>) -> Vec<Vec<f64>> {
        let yaw = target.y.atan2(target.x);
        if self.dof() != 7 {
            return vec![vec![0.0; self.dof()], self.clamp_joints(&vec![0.5; self.dof()])];
        }
        [[0.6, -1.4, 1.2], [0.9, -1.0, 0.8], [0.3, -1.9, 1.6]]
            .iter()
            .map(|s| self.clamp_joints(&[yaw, s[0], 0.0, s[1], 0.0, s[2], 0.0]))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct IkSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub damping: f64,
    /// Largest joint-space step per iteration, radians.
    pub max_step: f64,
}

impl Default for IkSettings {
    fn default() -> Self {
        Self { tolerance: 1e-3, max_iterations: 100, damping: 0.05, max_step: 0.3 }
    }
}

/// Jacobians of [`pose_error`] with respect to world-frame perturbations
/// `(δt, δθ)` of each argument.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseErrorJacobians {
    pub wrt_a: Matrix6<f64>,
    pub wrt_b: Matrix6<f64>,
}

/// `(t_a − t_b, log(R_a R_bᵀ))`.
pub fn pose_error(a: &Pose3, b: &Pose3) -> (Vector6<f64>, PoseErrorJacobians) {
    let ra = a.rotation_matrix();
    let rb = b.rotation_matrix();
    let r = so3::log(&Rotation3::from_matrix_unchecked(ra * rb.transpose()));
    let mut e = Vector6::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&(a.translation - b.translation));
    e.fixed_rows_mut::<3>(3).copy_from(&r);
    let mut wrt_a = Matrix6::zeros();
    let mut wrt_b = Matrix6::zeros();
    wrt_a.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    wrt_a.fixed_view_mut::<3, 3>(3, 3).copy_from(&so3::left_jacobian_inv(&r));
    wrt_b.fixed_view_mut::<3, 3>(0, 0).copy_from(&-Matrix3::identity());
    wrt_b.fixed_view_mut::<3, 3>(3, 3).copy_from(&-so3::right_jacobian_inv(&r));
    (e, PoseErrorJacobians { wrt_a, wrt_b })
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sphere {
    /// Center in the palm frame.
    pub center: [f64; 3],
    pub radius: f64,
}

impl Sphere {
    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }
}

/// Spheres covering the hand and the last two arm links.
#[derive(Clone, Debug, PartialEq)]
pub struct GripperGeometry {
    spheres: Vec<Sphere>,
}

impl GripperGeometry {
    pub fn new(spheres: Vec<Sphere>) -> Result<Self> {
        if spheres.iter().any(|s| !(s.radius > 0.0)) {
            return Err(Error::InvalidParameter("sphere radii must be positive".into()));
        }
        Ok(Self { spheres })
    }

    /// No spheres: only the object is checked.
    pub fn none() -> Self {
        Self { spheres: Vec::new() }
    }

    pub fn spheres(&self) -> &[Sphere] {
        &self.spheres
    }

    pub fn len(&self) -> usize {
        self.spheres.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spheres.is_empty()
    }

    /// Sphere centers posed by a palm pose.
    pub fn centers_at(&self, palm: &Pose3) -> Vec<Point3<f64>> {
        self.spheres.iter().map(|s| palm.transform_point(&Point3::from(s.center()))).collect()
    }
}

impl Default for GripperGeometry {
    /// Palm plus wrist, trailing the palm along −x.
    fn default() -> Self {
        Self::new(vec![
            Sphere { center: [-0.03, 0.0, 0.0], radius: 0.045 },
            Sphere { center: [-0.10, 0.0, 0.0], radius: 0.04 },
            Sphere { center: [-0.17, 0.0, 0.0], radius: 0.04 },
        ])
        .unwrap()
    }
}

/// One point per occupied voxel of a `spacing` lattice: the first point in
/// input order. Output is ordered by voxel.
pub fn voxel_downsample(c: &PointCloud, spacing: f64) -> Result<PointCloud> {
    if !(spacing > 0.0) {
        return Err(Error::InvalidParameter(format!("spacing must be positive, got {spacing}")));
    }
    let mut seen = std::collections::BTreeMap::new();
    for p in &c.points {
        let key = [
            (p.x / spacing).floor() as i64,
            (p.y / spacing).floor() as i64,
            (p.z / spacing).floor() as i64,
        ];
        seen.entry(key).or_insert(*p);
    }
    Ok(PointCloud::new(seen.into_values().collect(), c.frame.clone()))
}

/// The object frame used for placement: the cloud's centroid with
/// world-aligned axes at grasp time.
pub fn object_frame(z_o: &PointCloud) -> Result<Pose3> {
    Ok(Pose3::from_translation(crate::geom::centroid(z_o)?))
}

/// Object points and hand spheres expressed in the object's placement frame.
///
/// Object points are voxel-downsampled at `spacing`. Each sphere contributes
/// its center, to be checked with its radius subtracted from the clearance.
pub fn augment_object_cloud(
    z_o: &PointCloud,
    grasp: &GraspConfig,
    g: &GripperGeometry,
    spacing: f64,
) -> Result<CollisionQuerySet> {
    if z_o.is_empty() {
        return Err(Error::EmptyInput("object cloud"));
    }
    let frame = object_frame(z_o)?;
    let inv = frame.inverse();
    let object = voxel_downsample(&z_o.transformed(&inv), spacing)?;
    let palm_in_object = inv.compose(&grasp.palm);
    let robot = PointCloud::new(g.centers_at(&palm_in_object), "object");
    Ok(CollisionQuerySet {
        object: PointCloud::new(object.points, "object"),
        robot,
        robot_radii: g.spheres.iter().map(|s| s.radius).collect(),
    })
}
