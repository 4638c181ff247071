//! Desk-scale stand-ins for executing a plan.
//!
//! A grasp counts as successful when the grasp model scores it at least
//! `grasp_threshold` and the hand clears the grasp scene. A placement counts
//! when it clears the place scene, its footprint stays on the surface, and it
//! is supported: for flat placements enough of the footprint rests on the
//! surface or on tops of objects just below it, and for stacks the center of
//! mass projects inside a supporting object.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use jointpnp_core::costs::{PlacementCost, PoseSpace, TaskKind};
use jointpnp_core::geom::Pose3;
use jointpnp_core::planner::{check_constraints, Problem, Solution};

use crate::scene::{SceneFile, SceneObject};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupportSettings {
    pub grasp_threshold: f64,
    /// Supported share of the footprint a flat placement needs.
    pub min_support_fraction: f64,
    /// Height gap below the object still counted as contact, meters.
    pub contact_tolerance: f64,
    /// Footprint raster cell, meters.
    pub raster: f64,
}

impl Default for SupportSettings {
    fn default() -> Self {
        Self { grasp_threshold: 0.5, min_support_fraction: 0.6, contact_tolerance: 0.01, raster: 0.005 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    None,
    /// The solver reported no feasible solution.
    Infeasible,
    GraspScore,
    GraspCollision,
    PlaceCollision,
    OffSurface,
    Unsupported,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureReason::None => "none",
            FailureReason::Infeasible => "infeasible",
            FailureReason::GraspScore => "grasp_score",
            FailureReason::GraspCollision => "grasp_collision",
            FailureReason::PlaceCollision => "place_collision",
            FailureReason::OffSurface => "off_surface",
            FailureReason::Unsupported => "unsupported",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub grasp_success: bool,
    pub place_success: bool,
    /// Task likelihood at the solved placement, 0 when either step fails.
    pub likelihood: f64,
    /// First failed check, in the order grasp then place.
    pub failure: FailureReason,
    pub grasp_score: f64,
    /// Supported share of the footprint; 1 or 0 for the center-of-mass rule.
    pub support: f64,
    pub solve_time: Duration,
    pub eval_time: Duration,
}

impl EvalReport {
    pub fn success(&self) -> bool {
        self.grasp_success && self.place_success
    }
}

/// World points of the object at the solved placement.
pub fn placed_points(sol: &Solution, problem: &Problem) -> Vec<Point3<f64>> {
    let at = placed_transform(sol, problem);
    problem.spec.object.points.iter().map(|p| at.transform_point(p)).collect()
}

/// Rigid motion carrying the object from the grasp scene to its placement.
pub fn placed_transform(sol: &Solution, problem: &Problem) -> Pose3 {
    problem.place_pose3(&sol.place).compose(&Pose3::from_translation(-problem.object_centroid()))
}

/// Share of the footprint of `pts` resting on something: the surface
/// rectangle when the object bottom is at table height, or the top of a
/// scene object within `tol` below the bottom.
pub fn support_fraction(pts: &[Point3<f64>], scene: &SceneFile, supporters: &[SceneObject], s: &SupportSettings) -> f64 {
    let bottom = pts.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let cells = footprint_cells(pts, s.raster);
    if cells.is_empty() {
        return 0.0;
    }
    let surf = &scene.surface;
    let on_table = (bottom - surf.height).abs() <= s.contact_tolerance;
    let below: Vec<&SceneObject> = supporters.iter().filter(|o| (bottom - o.top()).abs() <= s.contact_tolerance).collect();
    let held = cells
        .iter()
        .filter(|c| {
            let table = on_table && c.x >= surf.min[0] && c.x <= surf.max[0] && c.y >= surf.min[1] && c.y <= surf.max[1];
            table || below.iter().any(|o| o.covers(c.x, c.y))
        })
        .count();
    held as f64 / cells.len() as f64
}

/// Centers of the raster cells the points project into.
fn footprint_cells(pts: &[Point3<f64>], raster: f64) -> Vec<Vector2<f64>> {
    let mut keys: Vec<(i64, i64)> = pts.iter().map(|p| ((p.x / raster).floor() as i64, (p.y / raster).floor() as i64)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter().map(|(i, j)| Vector2::new((i as f64 + 0.5) * raster, (j as f64 + 0.5) * raster)).collect()
}

/// Whether the center of mass of `pts` projects inside an object whose top
/// touches their bottom.
pub fn com_supported(pts: &[Point3<f64>], supporters: &[SceneObject], s: &SupportSettings) -> bool {
    let bottom = pts.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let com = pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / pts.len().max(1) as f64;
    supporters.iter().any(|o| (bottom - o.top()).abs() <= s.contact_tolerance && o.covers(com.x, com.y))
}

/// Scores `sol` against the scene it was solved in, using the scene's own
/// objects as supporters.
pub fn evaluate(sol: &Solution, scene: &SceneFile, problem: &Problem) -> EvalReport {
    evaluate_with(sol, scene, problem, &scene.objects, &SupportSettings::default())
}

pub fn evaluate_with(sol: &Solution, scene: &SceneFile, problem: &Problem, supporters: &[SceneObject], s: &SupportSettings) -> EvalReport {
    let start = Instant::now();
    let spec = &problem.spec;
    let grasp_score = spec.grasp_model.success(&sol.grasp, problem.summary());
    let mut report = EvalReport {
        grasp_success: false,
        place_success: false,
        likelihood: 0.0,
        failure: FailureReason::Infeasible,
        grasp_score,
        support: 0.0,
        solve_time: sol.wall_time,
        eval_time: Duration::ZERO,
    };
    if !sol.status.is_feasible() {
        report.eval_time = start.elapsed();
        return report;
    }
    let r = check_constraints(sol, problem);
    let grasp_fail = if grasp_score < s.grasp_threshold {
        Some(FailureReason::GraspScore)
    } else if r.grasp_collision().is_some_and(|c| c > 0.0) {
        Some(FailureReason::GraspCollision)
    } else {
        None
    };
    report.grasp_success = grasp_fail.is_none();

    let pts = placed_points(sol, problem);
    let surf = &scene.surface;
    let on_surface = pts.iter().all(|p| {
        p.x >= surf.min[0] - 1e-9 && p.x <= surf.max[0] + 1e-9 && p.y >= surf.min[1] - 1e-9 && p.y <= surf.max[1] + 1e-9
    });
    let stacking = spec.task.kind == TaskKind::Stack && problem.space() == PoseSpace::Spatial;
    report.support = if stacking {
        let table = table_supporter(scene);
        let mut all = supporters.to_vec();
        all.push(table);
        if com_supported(&pts, &all, s) {
            1.0
        } else {
            0.0
        }
    } else {
        support_fraction(&pts, scene, supporters, s)
    };
    let supported = if stacking { report.support > 0.5 } else { report.support >= s.min_support_fraction };
    let place_fail = if r.place_collision().is_some_and(|c| c > 0.0) {
        Some(FailureReason::PlaceCollision)
    } else if !supported {
        Some(FailureReason::Unsupported)
    } else if !on_surface {
        Some(FailureReason::OffSurface)
    } else {
        None
    };
    report.place_success = place_fail.is_none();
    report.failure = grasp_fail.or(place_fail).unwrap_or(FailureReason::None);
    if report.success() {
        let l = spec.task.kind.likelihood(&sol.place, problem.cost_context()).unwrap_or(0.0);
        report.likelihood = if l.is_finite() { l.clamp(0.0, 1.0) } else { 0.0 };
    }
    report.eval_time = start.elapsed();
    report
}

/// The surface rectangle as a flat object, for the center-of-mass rule.
fn table_supporter(scene: &SceneFile) -> SceneObject {
    let s = &scene.surface;
    SceneObject {
        name: "surface".into(),
        shape: crate::scene::Shape::Box { size: [s.max[0] - s.min[0], s.max[1] - s.min[1], 0.0] },
        position: [0.5 * (s.min[0] + s.max[0]), 0.5 * (s.min[1] + s.max[1]), s.height],
        yaw: 0.0,
    }
}

