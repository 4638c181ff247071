//! Joint grasp and placement inference, with pick-then-place and sampling
//! baselines.
//!
//! All three solvers share one variable vector
//! `[x_p | palm t | palm ω | preshape | q_g | q_p]`, one evaluator and one
//! Augmented Lagrangian loop; the baselines freeze parts of the vector.

mod al;
mod check;
mod eval;
mod init;
pub mod lbfgs;
mod solvers;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::costs::{CostContext, PlacePose, PoseSpace, TaskParams};
use crate::geom::{centroid, PointCloud};
use crate::grasp::{default_prior, summarize_object, GraspConfig, GraspModel, GraspPrior, ObjectSummary, PriorSettings};
use crate::robot::{voxel_downsample, ArmModel, GripperGeometry, IkSettings};
use crate::sdf::{build_scene_sdf, GradientMode, SdfSettings, TruncatedSdf};
use crate::{Error, Result};

pub use al::{AlSettings, AlState};
pub use check::{check_constraints, Residuals, Tolerances};
pub use eval::objective;
pub use init::{cube_orientations, init_place_prior, place_prior_candidates, PlaceCandidate};
pub use lbfgs::LbfgsSettings;
pub use solvers::{joint_solve, joint_solve_from, sampling_solve, sequential_solve};

/// The rectangle objects may be placed on, at table height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementSurface {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub height: f64,
}

impl PlacementSurface {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1]))
    }
}

/// Solver knobs. Defaults follow the documented schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub al: AlSettings,
    pub lbfgs: LbfgsSettings,
    pub ik: IkSettings,
    /// Prior grasps tried per solve.
    pub grasp_restarts: usize,
    /// Place candidates tried per grasp.
    pub place_restarts: usize,
    pub yaw_samples: usize,
    /// Cell size of the placement prior masks, meters.
    pub prior_grid: f64,
    /// Most IK attempts spent filtering ranked place candidates.
    pub max_ik_attempts: usize,
    /// Extra clearance demanded while optimizing, on top of the margin.
    pub collision_slack: f64,
    pub gradient_mode: GradientMode,
    pub tolerances: Tolerances,
    /// Run restarts on the thread pool.
    pub parallel: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            al: AlSettings::default(),
            lbfgs: LbfgsSettings::default(),
            ik: IkSettings::default(),
            grasp_restarts: 4,
            place_restarts: 2,
            yaw_samples: 16,
            prior_grid: 0.02,
            max_ik_attempts: 64,
            collision_slack: 0.002,
            gradient_mode: GradientMode::Interpolant,
            tolerances: Tolerances::default(),
            parallel: true,
        }
    }
}

/// Everything a solve needs.
#[derive(Clone)]
pub struct ProblemSpec {
    /// Object cloud in the grasp scene.
    pub object: PointCloud,
    /// Other objects around it in the grasp scene.
    pub grasp_clutter: Option<PointCloud>,
    /// Objects already in the place scene.
    pub place_scene: PointCloud,
    pub surface: PlacementSurface,
    pub task: TaskParams,
    pub grasp_model: Arc<dyn GraspModel>,
    pub prior: PriorSettings,
    pub arm: ArmModel,
    pub gripper: GripperGeometry,
    pub sdf: SdfSettings,
    /// Collision margin ε, meters.
    pub epsilon: f64,
    pub solver: SolverSettings,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("object", &self.object.len())
            .field("grasp_clutter", &self.grasp_clutter.as_ref().map(|c| c.len()))
            .field("place_scene", &self.place_scene.len())
            .field("surface", &self.surface)
            .field("task", &self.task)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

/// A spec with its fields, cost context, prior and bounds prepared.
#[derive(Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    place_sdf: Option<Arc<TruncatedSdf>>,
    grasp_sdf: Option<Arc<TruncatedSdf>>,
    summary: ObjectSummary,
    prior: GraspPrior,
    cost: CostContext,
    centroid: Vector3<f64>,
    /// Downsampled object points relative to the centroid.
    object_local: Vec<Vector3<f64>>,
    /// Largest planar distance of an object point from the centroid.
    planar_radius: f64,
    /// Centroid height of a planar placement resting on the surface.
    rest_height: f64,
    clutter_top: f64,
}

impl Problem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        let place_sdf = if spec.place_scene.is_empty() {
            None
        } else {
            Some(Arc::new(build_scene_sdf(&spec.place_scene, &spec.sdf)?))
        };
        Self::with_place_sdf(spec, place_sdf)
    }

    /// Reuses a field already built for the place scene, for instance one
    /// kept current with incremental updates.
    pub fn with_place_sdf(spec: ProblemSpec, place_sdf: Option<Arc<TruncatedSdf>>) -> Result<Self> {
        let s = &spec.surface;
        if !(s.max[0] > s.min[0] && s.max[1] > s.min[1]) || !s.height.is_finite() {
            return Err(Error::InvalidParameter(format!("degenerate placement surface {s:?}")));
        }
        if !(spec.epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!("margin must be non-negative, got {}", spec.epsilon)));
        }
        if spec.object.is_empty() {
            return Err(Error::EmptyInput("object cloud"));
        }
        // a saturated field cannot show a hand sphere as clear
        let reach = spec.gripper.spheres().iter().map(|s| s.radius).fold(0.0, f64::max) + spec.epsilon;
        let truncation = place_sdf.as_ref().map_or(spec.sdf.truncation, |f| f.truncation());
        if reach >= truncation.min(spec.sdf.truncation) {
            return Err(Error::InvalidParameter(format!(
                "field truncation {truncation} must exceed the largest hand sphere radius plus the margin ({reach})"
            )));
        }
        let grasp_sdf = match &spec.grasp_clutter {
            Some(c) if !c.is_empty() => Some(Arc::new(build_scene_sdf(c, &spec.sdf)?)),
            _ => None,
        };
        let summary = summarize_object(&spec.object)?;
        let prior = default_prior(&summary, &spec.prior);
        let cost = CostContext::new(spec.task.clone(), spec.object.clone(), spec.place_scene.clone())?;
        let c = centroid(&spec.object)?;
        let local = voxel_downsample(&spec.object.transformed(&crate::geom::Pose3::from_translation(-c)), spec.sdf.spacing)?;
        let object_local: Vec<Vector3<f64>> = local.points.iter().map(|p| p.coords).collect();
        let planar_radius = spec.object.points.iter().map(|p| (p.x - c.x).hypot(p.y - c.y)).fold(0.0, f64::max);
        let min_z = spec.object.points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        let rest_height = s.height + (c.z - min_z);
        let clutter_top = spec.place_scene.points.iter().map(|p| p.z).fold(s.height, f64::max);
        let p = Self {
            spec,
            place_sdf,
            grasp_sdf,
            summary,
            prior,
            cost,
            centroid: c,
            object_local,
            planar_radius,
            rest_height,
            clutter_top,
        };
        let (lo, hi) = p.place_translation_bounds();
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(Error::InvalidParameter("object does not fit on the placement surface".into()));
        }
        Ok(p)
    }

    pub fn space(&self) -> PoseSpace {
        self.spec.task.space()
    }

    pub fn summary(&self) -> &ObjectSummary {
        &self.summary
    }

    pub fn prior(&self) -> &GraspPrior {
        &self.prior
    }

    pub fn cost_context(&self) -> &CostContext {
        &self.cost
    }

    pub fn place_sdf(&self) -> Option<&TruncatedSdf> {
        self.place_sdf.as_deref()
    }

    pub fn grasp_sdf(&self) -> Option<&TruncatedSdf> {
        self.grasp_sdf.as_deref()
    }

    pub fn object_centroid(&self) -> Vector3<f64> {
        self.centroid
    }

    /// Centroid height at which a planar placement rests on the surface.
    pub fn rest_height(&self) -> f64 {
        self.rest_height
    }

    /// Bounds on the placed centroid: the surface shrunk by the object's
    /// planar radius, and for spatial placements `z ∈ [h, h + 1]`.
    pub fn place_translation_bounds(&self) -> ([f64; 3], [f64; 3]) {
        let s = &self.spec.surface;
        let r = self.planar_radius;
        let (zl, zh) = match self.space() {
            PoseSpace::Planar => (self.rest_height, self.rest_height),
            PoseSpace::Spatial => (s.height, s.height + 1.0),
        };
        ([s.min[0] + r, s.min[1] + r, zl], [s.max[0] - r, s.max[1] - r, zh])
    }

    /// World pose of a placement, planar ones lifted to the rest height.
    pub fn place_pose3(&self, x_p: &PlacePose) -> crate::geom::Pose3 {
        x_p.to_pose3(self.rest_height)
    }

    /// Palm pose at placement: `X_p · X_obj⁻¹ · X_g`.
    pub fn palm_at_place(&self, x_p: &PlacePose, grasp: &GraspConfig) -> crate::geom::Pose3 {
        let xp = self.place_pose3(x_p);
        let obj_inv = crate::geom::Pose3::from_translation(-self.centroid);
        xp.compose(&obj_inv).compose(&grasp.palm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Joint,
    Sequential,
    Sampling,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Joint => "joint",
            Method::Sequential => "sequential",
            Method::Sampling => "sampling",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Method::Joint),
            "sequential" => Ok(Method::Sequential),
            "sampling" => Ok(Method::Sampling),
            _ => Err(Error::InvalidParameter(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// All constraints hold at tolerance.
    Converged,
    /// Constraints hold but the last inner solve ran out of iterations.
    MaxIterations,
    /// No restart reached a feasible point.
    Infeasible,
    /// Pick-then-place found a grasp but no feasible placement for it.
    PlacementInfeasible,
}

impl SolveStatus {
    pub fn is_feasible(self) -> bool {
        matches!(self, SolveStatus::Converged | SolveStatus::MaxIterations)
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::PlacementInfeasible => "placement_infeasible",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationCounts {
    pub restarts: usize,
    pub outer: usize,
    pub inner: usize,
    pub evaluations: usize,
}

impl std::ops::AddAssign for IterationCounts {
    fn add_assign(&mut self, o: Self) {
        self.restarts += o.restarts;
        self.outer += o.outer;
        self.inner += o.inner;
        self.evaluations += o.evaluations;
    }
}

/// A solved grasp, placement and pair of arm configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub method: Method,
    pub grasp: GraspConfig,
    pub place: PlacePose,
    pub q_grasp: Vec<f64>,
    pub q_place: Vec<f64>,
    /// `α·H(x_p) − ln F(θ_g)`.
    pub objective: f64,
    pub grasp_success: f64,
    /// Reported task likelihood at `place`.
    pub place_likelihood: f64,
    pub residuals: Residuals,
    pub iterations: IterationCounts,
    pub wall_time: Duration,
    pub status: SolveStatus,
    /// Index of the winning restart.
    pub restart: usize,
    /// Max constraint violation after each outer iteration of the winner.
    pub violation_history: Vec<f64>,
}

#[cfg(test)]
mod tests;
