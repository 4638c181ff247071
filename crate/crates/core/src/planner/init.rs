//! Restart points: prior grasps and collision-free place candidates.
//!
//! Planar candidates come from correlating a 2D footprint of the object and
//! the hand spheres against the occupancy of the place scene, one footprint
//! per yaw sample. Stacking tries the 24 axis-aligned orientations above the
//! stack.

use std::collections::HashSet;

use nalgebra::{Matrix3, Point3, Rotation3, Vector2, Vector3};

use super::Problem;
use crate::costs::{PlacePose, PlacementCost, PoseSpace, TaskKind};
use crate::geom::{Pose2, Pose3};
use crate::grasp::{sample_prior, GraspConfig, GraspPrior};
use crate::robot::ArmModel;
use crate::{Error, Result};

/// Half-cell lifts tried above a stack before giving up on an orientation.
const STACK_LIFTS: usize = 8;

/// A ranked place candidate; `q` is the arm configuration reaching the
/// palm at this placement when it has been checked.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaceCandidate {
    pub pose: PlacePose,
    /// Task cost `H` at the candidate.
    pub cost: f64,
    pub q: Option<Vec<f64>>,
}

/// The 24 rotations mapping coordinate axes onto signed coordinate axes.
pub fn cube_orientations() -> Vec<Rotation3<f64>> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in perms {
        for signs in 0..8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(Rotation3::from_matrix_unchecked(m));
            }
        }
    }
    out
}

/// The 2D lattice the planar prior works on.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Lattice {
    pub origin: Vector2<f64>,
    pub cell: f64,
    pub dims: [usize; 2],
}

impl Lattice {
    pub fn of(problem: &Problem) -> Self {
        let s = &problem.spec.surface;
        let cell = problem.spec.solver.prior_grid;
        let dims = [
            ((s.max[0] - s.min[0]) / cell).ceil().max(1.0) as usize,
            ((s.max[1] - s.min[1]) / cell).ceil().max(1.0) as usize,
        ];
        Self { origin: Vector2::new(s.min[0], s.min[1]), cell, dims }
    }

    pub fn center(&self, i: i64, j: i64) -> Vector2<f64> {
        self.origin + Vector2::new((i as f64 + 0.5) * self.cell, (j as f64 + 0.5) * self.cell)
    }

    pub fn index_of(&self, x: f64, y: f64) -> (i64, i64) {
        (((x - self.origin.x) / self.cell).floor() as i64, ((y - self.origin.y) / self.cell).floor() as i64)
    }
}

/// Cells holding place-scene points above the surface.
pub(crate) fn scene_cells(problem: &Problem, lat: &Lattice) -> HashSet<(i64, i64)> {
    let h = problem.spec.surface.height;
    problem
        .spec
        .place_scene
        .points
        .iter()
        .filter(|p| p.z > h + 1e-3)
        .map(|p| lat.index_of(p.x, p.y))
        .collect()
}

/// Cell offsets covered by the object and the low hand spheres at yaw
/// `theta`, relative to the cell holding the centroid.
pub fn footprint_mask(problem: &Problem, grasp: &GraspConfig, theta: f64) -> Vec<(i64, i64)> {
    let cell = problem.spec.solver.prior_grid;
    let eps = problem.spec.epsilon;
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), theta);
    let mut set = HashSet::new();
    let grow = (eps / cell).ceil() as i64;
    let off = |v: f64| (v / cell + 0.5).floor() as i64;
    for q in &problem.object_local {
        let v = rz * q;
        let (a, b) = (off(v.x), off(v.y));
        for da in -grow..=grow {
            for db in -grow..=grow {
                set.insert((a + da, b + db));
            }
        }
    }
    let rg = grasp.palm.rotation_matrix();
    for s in problem.spec.gripper.spheres() {
        let c = rz * (rg * s.center() + grasp.palm.translation - problem.centroid);
        if problem.rest_height + c.z - s.radius >= problem.clutter_top + eps {
            continue;
        }
        let rho = s.radius + eps;
        let reach = (rho / cell).ceil() as i64 + 1;
        let (a, b) = (off(c.x), off(c.y));
        set.insert((a, b));
        for da in -reach..=reach {
            for db in -reach..=reach {
                let p = Vector2::new((a + da) as f64 * cell, (b + db) as f64 * cell);
                if (p - c.xy()).norm() <= rho {
                    set.insert((a + da, b + db));
                }
            }
        }
    }
    let mut v: Vec<(i64, i64)> = set.into_iter().collect();
    v.sort_unstable();
    v
}

fn yaw_samples(problem: &Problem) -> Vec<f64> {
    let n = problem.spec.solver.yaw_samples.max(1);
    (0..n).map(|k| 2.0 * std::f64::consts::PI * k as f64 / n as f64).collect()
}

fn planar_pose(problem: &Problem, c: Vector2<f64>, theta: f64) -> PlacePose {
    match problem.space() {
        PoseSpace::Planar => PlacePose::Planar(Pose2::new(c.x, c.y, theta)),
        PoseSpace::Spatial => PlacePose::Spatial(Pose3::from_rotation_matrix(
            Vector3::new(c.x, c.y, problem.rest_height),
            &Rotation3::from_axis_angle(&Vector3::z_axis(), theta),
        )),
    }
}

/// Every collision-free candidate before the kinematic filter, ranked by
/// task cost (ties keep yaw-then-cell order).
pub fn place_prior_candidates(problem: &Problem, grasp: &GraspConfig) -> Result<Vec<PlaceCandidate>> {
    let mut out = if problem.spec.task.kind == TaskKind::Stack {
        stack_candidates(problem, grasp)
    } else {
        planar_candidates(problem, grasp)
    };
    let ctx = problem.cost_context();
    for c in &mut out {
        c.cost = ctx.params.kind.value(&c.pose, ctx)?;
    }
    out.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    Ok(out)
}

fn planar_candidates(problem: &Problem, grasp: &GraspConfig) -> Vec<PlaceCandidate> {
    let lat = Lattice::of(problem);
    let occupied = scene_cells(problem, &lat);
    let (lo, hi) = problem.place_translation_bounds();
    let mut out = Vec::new();
    for theta in yaw_samples(problem) {
        let mask = footprint_mask(problem, grasp, theta);
        for i in 0..lat.dims[0] as i64 {
            for j in 0..lat.dims[1] as i64 {
                let c = lat.center(i, j);
                if c.x < lo[0] || c.x > hi[0] || c.y < lo[1] || c.y > hi[1] {
                    continue;
                }
                if mask.iter().any(|(a, b)| occupied.contains(&(i + a, j + b))) {
                    continue;
                }
                out.push(PlaceCandidate { pose: planar_pose(problem, c, theta), cost: 0.0, q: None });
            }
        }
    }
    out
}

fn stack_candidates(problem: &Problem, grasp: &GraspConfig) -> Vec<PlaceCandidate> {
    let spec = &problem.spec;
    let eps = spec.epsilon;
    let gap = eps + spec.solver.collision_slack;
    let (lo, hi) = problem.place_translation_bounds();
    let base = spec.task.stack_base;
    let cx = base.x.clamp(lo[0], hi[0]);
    let cy = base.y.clamp(lo[1], hi[1]);
    let mut out = Vec::new();
    for r in cube_orientations() {
        let pts: Vec<Vector3<f64>> = problem.object_local.iter().map(|q| r * q).collect();
        let (mut xl, mut xh, mut yl, mut yh, mut zl) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
        for p in &pts {
            xl = xl.min(p.x);
            xh = xh.max(p.x);
            yl = yl.min(p.y);
            yh = yh.max(p.y);
            zl = zl.min(p.z);
        }
        let top = spec
            .place_scene
            .points
            .iter()
            .filter(|p| p.x >= cx + xl - eps && p.x <= cx + xh + eps && p.y >= cy + yl - eps && p.y <= cy + yh + eps)
            .map(|p| p.z)
            .fold(spec.surface.height, f64::max);
        // the field's zero level sits on voxel centers, so lift in half cells until clear
        let z0 = top - zl + gap;
        let lifted = (0..=STACK_LIFTS).map(|k| (z0 + 0.5 * k as f64 * spec.sdf.spacing).clamp(lo[2], hi[2])).find_map(|z| {
            let pose = PlacePose::Spatial(Pose3::from_rotation_matrix(Vector3::new(cx, cy, z), &r));
            clear_of_scene(problem, &pose, grasp, gap).then_some(pose)
        });
        if let Some(pose) = lifted {
            out.push(PlaceCandidate { pose, cost: 0.0, q: None });
        }
    }
    out
}

/// Object and hand spheres keep `eps` from the place scene.
fn clear_of_scene(problem: &Problem, pose: &PlacePose, grasp: &GraspConfig, eps: f64) -> bool {
    let Some(sdf) = problem.place_sdf() else {
        return true;
    };
    let xp = problem.place_pose3(pose);
    let objects_clear = problem.object_local.iter().all(|q| sdf.query(&xp.transform_point(&Point3::from(*q))).distance >= eps);
    let palm = problem.palm_at_place(pose, grasp);
    objects_clear
        && problem
            .spec
            .gripper
            .spheres()
            .iter()
            .zip(problem.spec.gripper.centers_at(&palm))
            .all(|(s, c)| sdf.query(&c).distance - s.radius >= eps)
}

/// Upper bound on how far the palm can be from the second joint's origin.
fn reach_bound(arm: &ArmModel) -> (Vector3<f64>, f64) {
    let mut t = arm.base;
    if let Some(j) = arm.joints.first() {
        t = t.compose(&j.origin);
    }
    let reach: f64 = arm.joints.iter().skip(1).map(|j| j.origin.translation.norm()).sum::<f64>() + arm.tool.translation.norm();
    (t.translation, reach)
}

/// Arm configuration reaching `palm`, if the arm can.
pub(crate) fn reach(problem: &Problem, palm: &Pose3, hint: Option<&[f64]>) -> Option<Vec<f64>> {
    let arm = &problem.spec.arm;
    let (shoulder, r) = reach_bound(arm);
    if (palm.translation - shoulder).norm() > r + 1e-6 {
        return None;
    }
    let mut seeds = Vec::new();
    if let Some(h) = hint {
        seeds.push(h.to_vec());
    }
    seeds.extend(arm.ik_seeds(&palm.translation));
    arm.solve_ik(palm, &seeds, &problem.spec.solver.ik)
}

/// Best-effort arm configuration for `palm`: an IK solution when one exists,
/// otherwise the closest damped least-squares result.
pub(crate) fn reach_or_closest(problem: &Problem, palm: &Pose3, hint: Option<&[f64]>) -> Vec<f64> {
    if let Some(q) = reach(problem, palm, hint) {
        return q;
    }
    let arm = &problem.spec.arm;
    let mut seeds = Vec::new();
    if let Some(h) = hint {
        seeds.push(h.to_vec());
    }
    seeds.extend(arm.ik_seeds(&palm.translation));
    seeds
        .iter()
        .map(|s| arm.dls(palm, s, &problem.spec.solver.ik))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(q, _)| q)
        .unwrap_or_else(|| vec![0.0; arm.dof()])
}

/// Up to `count` ranked place candidates for `grasp` that are collision-free
/// in the 2D prior and reachable by the arm.
pub fn init_place_prior(problem: &Problem, grasp: &GraspConfig, count: usize) -> Result<Vec<PlaceCandidate>> {
    let ranked = place_prior_candidates(problem, grasp)?;
    if ranked.is_empty() {
        return Err(Error::InfeasibleInit);
    }
    let mut out = Vec::new();
    for mut c in ranked.into_iter().take(problem.spec.solver.max_ik_attempts) {
        let palm = problem.palm_at_place(&c.pose, grasp);
        if let Some(q) = reach(problem, &palm, None) {
            c.q = Some(q);
            out.push(c);
            if out.len() >= count {
                break;
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InfeasibleInit);
    }
    Ok(out)
}

/// Prior modes by weight, then samples, `count` grasps in all.
pub(crate) fn grasp_inits(problem: &Problem, count: usize, seed: u64) -> Result<Vec<GraspConfig>> {
    let prior: &GraspPrior = problem.prior();
    let hand = problem.spec.grasp_model.hand();
    let mut order: Vec<usize> = (0..prior.components().len()).collect();
    order.sort_by(|a, b| prior.components()[*b].weight.total_cmp(&prior.components()[*a].weight));
    let mut out: Vec<GraspConfig> = order.iter().take(count).map(|&k| prior.mean_grasp(k, problem.summary(), hand)).collect();
    if out.len() < count {
        out.extend(sample_prior(prior, problem.summary(), hand, count - out.len(), seed)?);
    }
    Ok(out)
}

/// Placement used when the prior yields nothing: the cheapest in-bounds
/// lattice pose ignoring collisions.
pub(crate) fn fallback_place(problem: &Problem) -> Result<PlacePose> {
    let (lo, hi) = problem.place_translation_bounds();
    let ctx = problem.cost_context();
    if problem.spec.task.kind == TaskKind::Stack {
        let b = problem.spec.task.stack_base;
        let t = Vector3::new(b.x.clamp(lo[0], hi[0]), b.y.clamp(lo[1], hi[1]), (b.z + 0.1).clamp(lo[2], hi[2]));
        return Ok(PlacePose::Spatial(Pose3::from_translation(t)));
    }
    let lat = Lattice::of(problem);
    let mut best: Option<(f64, PlacePose)> = None;
    for theta in yaw_samples(problem) {
        for i in 0..lat.dims[0] as i64 {
            for j in 0..lat.dims[1] as i64 {
                let c = lat.center(i, j);
                let c = Vector2::new(c.x.clamp(lo[0], hi[0]), c.y.clamp(lo[1], hi[1]));
                let p = planar_pose(problem, c, theta);
                let v = ctx.params.kind.value(&p, ctx)?;
                if best.as_ref().is_none_or(|b| v < b.0) {
                    best = Some((v, p));
                }
            }
        }
    }
    Ok(best.expect("lattice is non-empty").1)
}
