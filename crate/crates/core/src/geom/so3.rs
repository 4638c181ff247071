//! Exponential-map helpers for rotations.
//!
//! All rotation derivatives in the crate use *world-frame* (left)
//! perturbations: a rotation `R` is perturbed as `exp(δ)·R`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

const SMALL_ANGLE: f64 = 1e-6;

/// Skew-symmetric matrix such that `hat(a) * b == a × b`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn exp(w: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::new(*w)
}

/// Rotation vector of `r`, accurate down to tiny angles.
pub fn log(r: &Rotation3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let s = v.norm();
    if s < SMALL_ANGLE {
        return v * (2.0 / w);
    }
    v * (2.0 * s.atan2(w) / s)
}

/// Left Jacobian of SO(3): `exp(w + dw) ≈ exp(J_l(w)·dw)·exp(w)`.
pub fn left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() + k * a + k * k * b
}

pub fn left_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let c = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

/// Right Jacobian: `exp(w + dw) ≈ exp(w)·exp(J_r(w)·dw)`.
pub fn right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian(&-w)
}

pub fn right_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian_inv(&-w)
}
