//! Constraint residuals recomputed from a stored solution.

use serde::{Deserialize, Serialize};

use super::{Problem, Solution};
use crate::costs::PoseSpace;
use crate::robot::{augment_object_cloud, pose_error};
use crate::sdf::min_sdf_over_set;

/// Residuals of every constraint; each is satisfied when `≤` its tolerance.
/// Collision entries are `ε − clearance`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Largest excursion of the placed centroid outside its bounds.
    pub place_bounds: f64,
    pub joint_limits: f64,
    /// Norm of the grasp pose error `(Δt, log ΔR)`.
    pub fk_grasp: f64,
    pub fk_place: f64,
    pub place_object: Option<f64>,
    pub place_robot: Option<f64>,
    pub grasp_robot: Option<f64>,
    /// Surface height minus the lowest placed object point.
    pub table: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub fk: f64,
    pub collision: f64,
    pub bounds: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { fk: 1e-3, collision: 0.0, bounds: 1e-9 }
    }
}

fn opt_max(v: &[Option<f64>]) -> Option<f64> {
    v.iter().flatten().cloned().reduce(f64::max)
}

impl Residuals {
    /// Worst placement-side collision residual.
    pub fn place_collision(&self) -> Option<f64> {
        opt_max(&[self.place_object, self.place_robot, self.table])
    }

    pub fn grasp_collision(&self) -> Option<f64> {
        self.grasp_robot
    }

    pub fn collision(&self) -> Option<f64> {
        opt_max(&[self.place_object, self.place_robot, self.grasp_robot, self.table])
    }

    pub fn is_feasible(&self, t: &Tolerances) -> bool {
        self.place_bounds <= t.bounds
            && self.joint_limits <= t.bounds
            && self.fk_grasp <= t.fk
            && self.fk_place <= t.fk
            && self.collision().is_none_or(|c| c <= t.collision)
    }

    /// Largest absolute difference between matching entries; infinite when
    /// one side reports a constraint the other lacks.
    pub fn max_difference(&self, o: &Residuals) -> f64 {
        let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => (x - y).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        };
        [
            (self.place_bounds - o.place_bounds).abs(),
            (self.joint_limits - o.joint_limits).abs(),
            (self.fk_grasp - o.fk_grasp).abs(),
            (self.fk_place - o.fk_place).abs(),
            opt(self.place_object, o.place_object),
            opt(self.place_robot, o.place_robot),
            opt(self.grasp_robot, o.grasp_robot),
            opt(self.table, o.table),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Recomputes every residual of `sol` from scratch.
pub fn check_constraints(sol: &Solution, problem: &Problem) -> Residuals {
    let spec = &problem.spec;
    let arm = &spec.arm;
    let eps = spec.epsilon;
    let xp = problem.place_pose3(&sol.place);

    let (lo, hi) = problem.place_translation_bounds();
    let t = xp.translation;
    let place_bounds = (0..3).map(|k| (lo[k] - t[k]).max(t[k] - hi[k])).fold(f64::NEG_INFINITY, f64::max);
    let joint_limits = sol
        .q_grasp
        .iter()
        .chain(&sol.q_place)
        .zip(arm.joints.iter().chain(&arm.joints))
        .map(|(q, j)| (j.lower - q).max(q - j.upper))
        .fold(f64::NEG_INFINITY, f64::max);

    let fk = |q: &[f64], target| arm.fk(q).map(|p| pose_error(&p, target).0.norm()).unwrap_or(f64::INFINITY);
    let fk_grasp = fk(&sol.q_grasp, &sol.grasp.palm);
    let fk_place = fk(&sol.q_place, &problem.palm_at_place(&sol.place, &sol.grasp));

    let set = augment_object_cloud(&spec.object, &sol.grasp, &spec.gripper, spec.sdf.spacing).expect("object is non-empty");
    let (place_object, place_robot) = match problem.place_sdf() {
        Some(sdf) => {
            let m = min_sdf_over_set(sdf, &xp, &set, spec.solver.gradient_mode).expect("query set is consistent");
            (m.object.map(|o| eps - o.distance), m.robot.map(|r| eps - r.distance))
        }
        None => (None, None),
    };
    let grasp_robot = problem.grasp_sdf().and_then(|sdf| {
        spec.gripper
            .spheres()
            .iter()
            .zip(spec.gripper.centers_at(&sol.grasp.palm))
            .map(|(s, c)| eps - (sdf.query(&c).distance - s.radius))
            .reduce(f64::max)
    });
    let table = match problem.space() {
        PoseSpace::Spatial => {
            let low = set.object.points.iter().map(|p| xp.transform_point(p).z).fold(f64::INFINITY, f64::min);
            Some(spec.surface.height - low)
        }
        PoseSpace::Planar => None,
    };
    Residuals { place_bounds, joint_limits, fk_grasp, fk_place, place_object, place_robot, grasp_robot, table }
}
