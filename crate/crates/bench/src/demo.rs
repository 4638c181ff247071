//! Sequential placement: objects are planned and put down one at a time,
//! and the place scene's field is updated in place after each one.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector2};

use jointpnp_core::costs::{line_normal, stack_orientation_cost, PoseSpace, TaskKind};
use jointpnp_core::geom::{PointCloud, Pose3};
use jointpnp_core::planner::{cube_orientations, joint_solve, Problem, Solution};
use jointpnp_core::sdf::{build_scene_sdf, build_sdf, occupancy_from_points, update_sdf, TruncatedSdf};

use crate::evaluate::{evaluate_with, placed_points, placed_transform, EvalReport, FailureReason, SupportSettings};
use crate::scene::{SceneFile, SceneObject, Shape, DEFAULT_VIEWPOINT, GRASP_AREA, SCENE_SCHEMA};
use crate::scene::{SurfaceBlock, TaskBlock};
use crate::{field_settings, problem_spec, BenchError, BuildOptions, Result};

#[derive(Clone, Debug)]
pub struct StepReport {
    pub object: String,
    pub solution: Option<Solution>,
    pub report: EvalReport,
    pub error: Option<String>,
    /// Distance of the placed centroid from the line, for inline tasks.
    pub line_deviation: Option<f64>,
    /// Orientation part of the stacking cost at the solved pose.
    pub orientation_cost: Option<f64>,
    /// The same at the object's original orientation.
    pub identity_cost: Option<f64>,
    /// Lowest orientation cost over the rotations of a cube.
    pub best_flat_cost: Option<f64>,
    /// Whether the updated field equals one rebuilt from all occupancy.
    pub sdf_matches_rebuild: bool,
}

#[derive(Clone, Debug)]
pub struct SequenceReport {
    pub kind: TaskKind,
    pub steps: Vec<StepReport>,
    /// Top of everything placed, above the surface.
    pub stack_height: f64,
}

/// Four cylinders to line up along a slanted line.
pub fn inline_demo_scene() -> SceneFile {
    let cyl = |i: usize, r: f64, h: f64| SceneObject {
        name: format!("cylinder-{i}"),
        shape: Shape::Cylinder { radius: r, height: h },
        position: [GRASP_AREA[0], GRASP_AREA[1], 0.0],
        yaw: 0.0,
    };
    let sequence = vec![cyl(0, 0.025, 0.10), cyl(1, 0.028, 0.09), cyl(2, 0.022, 0.11), cyl(3, 0.03, 0.08)];
    SceneFile {
        schema: SCENE_SCHEMA.into(),
        name: "inline-demo".into(),
        viewpoint: DEFAULT_VIEWPOINT,
        sample_spacing: 0.005,
        cull: true,
        surface: SurfaceBlock { min: [0.30, -0.35], max: [0.75, 0.20], height: 0.0 },
        task: TaskBlock {
            kind: TaskKind::Inline,
            alpha: 20.0,
            target: Some(vec![0.52, -0.08, 0.0]),
            line_angle: 0.4,
            stack_base: None,
            tether: None,
            pack_reference: None,
        },
        grasp_target: sequence[0].clone(),
        objects: Vec::new(),
        grasp_clutter: Vec::new(),
        sequence,
        requested_clutter: None,
    }
}

/// Three upright boxes to stack; lying down lowers the stack.
pub fn stacking_demo_scene() -> SceneFile {
    let block = |i: usize, size: [f64; 3]| SceneObject {
        name: format!("block-{i}"),
        shape: Shape::Box { size },
        position: [GRASP_AREA[0], GRASP_AREA[1], 0.0],
        yaw: 0.0,
    };
    let sequence = vec![block(0, [0.05, 0.07, 0.11]), block(1, [0.045, 0.06, 0.10]), block(2, [0.04, 0.06, 0.09])];
    SceneFile {
        schema: SCENE_SCHEMA.into(),
        name: "stacking-demo".into(),
        viewpoint: DEFAULT_VIEWPOINT,
        sample_spacing: 0.005,
        // blocks are turned over, so their hidden faces matter
        cull: false,
        surface: SurfaceBlock { min: [0.30, -0.35], max: [0.75, 0.20], height: 0.0 },
        task: TaskBlock {
            kind: TaskKind::Stack,
            alpha: 2.0,
            target: None,
            line_angle: 0.0,
            stack_base: Some([0.52, -0.08, 0.0]),
            tether: None,
            pack_reference: None,
        },
        grasp_target: sequence[0].clone(),
        objects: Vec::new(),
        grasp_clutter: Vec::new(),
        sequence,
        requested_clutter: None,
    }
}

/// Options the demos use. Stacking needs a small margin and a finer field
/// so blocks come to rest close to the ones below.
pub fn demo_options(kind: TaskKind) -> BuildOptions {
    let mut o = BuildOptions::default();
    if kind == TaskKind::Stack {
        o.epsilon = 0.002;
        o.voxel = 0.004;
    }
    o
}

fn cloud_object(name: &str, c: &PointCloud) -> SceneObject {
    SceneObject {
        name: name.into(),
        shape: Shape::Points { points: c.points.iter().map(|p| [p.x, p.y, p.z]).collect() },
        position: [0.0; 3],
        yaw: 0.0,
    }
}

fn matches_rebuild(sdf: &TruncatedSdf, clouds: &[PointCloud]) -> bool {
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let occ = occupancy_from_points(*sdf.geometry(), &refs);
    match build_sdf(&occ, sdf.truncation()) {
        Ok(r) => r.occupancy() == sdf.occupancy() && r.distances() == sdf.distances(),
        Err(_) => false,
    }
}

/// Plans and places `scene.sequence` in order with the joint solver.
///
/// After each feasible placement the object's cloud joins the place scene
/// and the field is updated incrementally; failed objects are recorded and
/// skipped. Stacks grow on the top center of the last placed object.
pub fn run_sequential_task(scene: &SceneFile, opts: &BuildOptions, seed: u64) -> Result<SequenceReport> {
    if scene.sequence.len() < 2 {
        return Err(BenchError::Config("a sequential task needs at least two objects".into()));
    }
    let kind = scene.task.kind;
    let support = SupportSettings::default();
    let mut current = scene.clone();
    let mut clouds: Vec<PointCloud> = scene.objects.iter().map(|o| scene.object_cloud(o)).collect();
    let mut sdf: Option<Arc<TruncatedSdf>> = if clouds.is_empty() {
        None
    } else {
        Some(Arc::new(build_scene_sdf(&scene.place_cloud(), &field_settings(opts.voxel, opts.epsilon))?))
    };
    let mut steps = Vec::new();
    for (i, obj) in scene.sequence.iter().enumerate() {
        current.grasp_target = obj.clone();
        let mut step = StepReport {
            object: obj.name.clone(),
            solution: None,
            report: EvalReport {
                grasp_success: false,
                place_success: false,
                likelihood: 0.0,
                failure: FailureReason::Infeasible,
                grasp_score: 0.0,
                support: 0.0,
                solve_time: Default::default(),
                eval_time: Default::default(),
            },
            error: None,
            line_deviation: None,
            orientation_cost: None,
            identity_cost: None,
            best_flat_cost: None,
            sdf_matches_rebuild: sdf.as_ref().is_none_or(|s| matches_rebuild(s, &clouds)),
        };
        let solved = problem_spec(&current, opts)
            .and_then(|spec| Ok(Problem::with_place_sdf(spec, sdf.clone())?))
            .and_then(|p| Ok((joint_solve(&p, seed.wrapping_add(i as u64))?, p)));
        let (sol, problem) = match solved {
            Ok(x) => x,
            Err(e) => {
                step.error = Some(e.to_string());
                steps.push(step);
                continue;
            }
        };
        step.report = evaluate_with(&sol, &current, &problem, &current.objects, &support);
        let t = problem.place_pose3(&sol.place).translation;
        match kind {
            TaskKind::Inline => {
                let x_t = problem.spec.task.target.expect("inline target").translation();
                let n = line_normal(problem.spec.task.line_angle);
                step.line_deviation = Some(n.dot(&(Vector2::new(t.x, t.y) - Vector2::new(x_t.x, x_t.y))).abs());
            }
            TaskKind::Stack if problem.space() == PoseSpace::Spatial => {
                let ext = problem.cost_context().extents();
                let mode = problem.spec.task.abs_mode;
                let r = problem.place_pose3(&sol.place).rotation_matrix();
                step.orientation_cost = Some(stack_orientation_cost(&r, &ext, mode).0);
                step.identity_cost = Some(stack_orientation_cost(&Matrix3::identity(), &ext, mode).0);
                step.best_flat_cost =
                    cube_orientations().iter().map(|q| stack_orientation_cost(q.matrix(), &ext, mode).0).reduce(f64::min);
            }
            _ => {}
        }
        if sol.status.is_feasible() {
            let placed = PointCloud::new(placed_points(&sol, &problem), "world");
            let at: Pose3 = placed_transform(&sol, &problem);
            let next = match &sdf {
                Some(s) => update_sdf(s, &problem.spec.object, &at)?,
                None => build_scene_sdf(&placed, &problem.spec.sdf)?,
            };
            sdf = Some(Arc::new(next));
            clouds.push(placed.clone());
            step.sdf_matches_rebuild &= matches_rebuild(sdf.as_ref().expect("just set"), &clouds);
            if kind == TaskKind::Stack {
                let top = placed.points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
                current.task.stack_base = Some([t.x, t.y, top]);
            }
            current.objects.push(cloud_object(&obj.name, &placed));
        }
        step.solution = Some(sol);
        steps.push(step);
    }
    let h = scene.surface.height;
    let stack_height = clouds.iter().flat_map(|c| c.points.iter().map(|p| p.z - h)).fold(0.0, f64::max);
    Ok(SequenceReport { kind, steps, stack_height })
}

/// Sum of every sequence object's smallest dimension.
pub fn min_dimension_sum(scene: &SceneFile) -> f64 {
    scene
        .sequence
        .iter()
        .map(|o| match &o.shape {
            Shape::Box { size } => size.iter().cloned().fold(f64::INFINITY, f64::min),
            Shape::Cylinder { radius, height } => (2.0 * radius).min(*height),
            Shape::Points { points } => {
                let ext = (0..3).map(|k| {
                    let v = points.iter().map(|p| p[k]);
                    v.clone().fold(f64::NEG_INFINITY, f64::max) - v.fold(f64::INFINITY, f64::min)
                });
                ext.fold(f64::INFINITY, f64::min)
            }
        })
        .sum()
}
