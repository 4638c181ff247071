use std::f64::consts::PI;

use nalgebra::{Isometry3, Matrix3, Point2, Point3, Quaternion, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// Planar pose `(x, y, θ)` with `θ ∈ (-π, π]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)
    }

    pub fn transform_point(&self, p: &Point2<f64>) -> Point2<f64> {
        let (s, c) = self.theta.sin_cos();
        Point2::new(c * p.x - s * p.y + self.x, s * p.x + c * p.y + self.y)
    }

    /// The planar pose lifted into 3D at height `z`.
    pub fn to_pose3(&self, z: f64) -> Pose3 {
        Pose3::from_parts(
            Vector3::new(self.x, self.y, z),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.theta),
        )
    }
}

/// Rigid transform with a unit quaternion kept in the `w ≥ 0` hemisphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose3 {
    pub translation: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
}

impl Pose3 {
    pub fn identity() -> Self {
        Self { translation: Vector3::zeros(), rotation: UnitQuaternion::identity() }
    }

    pub fn from_parts(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self { translation, rotation: canonical(rotation) }
    }

    pub fn from_rotation_matrix(translation: Vector3<f64>, rotation: &Rotation3<f64>) -> Self {
        Self::from_parts(translation, UnitQuaternion::from_rotation_matrix(rotation))
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::from_parts(t, UnitQuaternion::identity())
    }

    /// Builds a pose from a `(w, x, y, z)` quaternion, normalizing it.
    pub fn from_wxyz(translation: Vector3<f64>, q: [f64; 4]) -> Self {
        let quat = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        Self::from_parts(translation, quat)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::from_parts(iso.translation.vector, iso.rotation)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3::from_parts(
            self.translation + self.rotation * other.translation,
            self.rotation * other.rotation,
        )
    }

    pub fn inverse(&self) -> Pose3 {
        let inv = self.rotation.inverse();
        Pose3::from_parts(-(inv * self.translation), inv)
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.quaternion().w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// `T_2(p)`, the homogeneous SE(2) matrix of a planar pose.
pub fn homogeneous_2d(p: &Pose2) -> Matrix3<f64> {
    let (s, c) = p.theta.sin_cos();
    Matrix3::new(c, -s, p.x, s, c, p.y, 0.0, 0.0, 1.0)
}

/// How the absolute-valued rotation used by the stacking cost is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsRotationMode {
    /// `|R|` taken entrywise on the full rotation matrix.
    #[default]
    Elementwise,
    /// `|R_x(a)|·|R_y(b)|·|R_z(c)|` over the `R = R_x R_y R_z` Euler factors.
    PerAxisProduct,
}

/// Euler angles `(a, b, c)` with `R = R_x(a)·R_y(b)·R_z(c)`.
pub fn euler_xyz(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let b = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
    (a, b, c)
}

pub fn abs_rotation(p: &Pose3, mode: AbsRotationMode) -> Matrix3<f64> {
    abs_rotation_matrix(&p.rotation_matrix(), mode)
}

pub fn abs_rotation_matrix(r: &Matrix3<f64>, mode: AbsRotationMode) -> Matrix3<f64> {
    match mode {
        AbsRotationMode::Elementwise => r.abs(),
        AbsRotationMode::PerAxisProduct => {
            let (a, b, c) = euler_xyz(r);
            let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), a).into_inner().abs();
            let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), b).into_inner().abs();
            let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), c).into_inner().abs();
            rx * ry * rz
        }
    }
}
