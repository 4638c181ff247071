//! Scenes, desk-scale evaluation and benchmark sweeps for `jointpnp-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod demo;
pub mod evaluate;
pub mod run;
pub mod scene;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use jointpnp_core::grasp::{PriorSettings, SurrogateModel, SurrogateParams};
use jointpnp_core::planner::{Problem, ProblemSpec, SolverSettings};
use jointpnp_core::robot::{ArmModel, GripperGeometry};
use jointpnp_core::sdf::SdfSettings;

pub use demo::{run_sequential_task, SequenceReport, StepReport};
pub use evaluate::{evaluate, EvalReport, FailureReason, SupportSettings};
pub use run::{run_benchmark, BenchConfig, BenchOutput, SceneSet};
pub use scene::{adversarial_scene, generate_scene, SceneFile, SceneObject, Shape};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] jointpnp_core::Error),
    #[error("scene parse: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("scene write: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

/// Settings shared by every problem built from a scene file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    /// Collision margin, meters.
    pub epsilon: f64,
    /// SDF voxel size, meters.
    pub voxel: f64,
    /// Overrides the scene's likelihood sharpness.
    pub alpha: Option<f64>,
    pub solver: SolverSettings,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { epsilon: 0.005, voxel: 0.01, alpha: None, solver: SolverSettings::default() }
    }
}

impl BuildOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(BenchError::Config(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if !(self.voxel > 0.0 && self.voxel.is_finite()) {
            return Err(BenchError::Config(format!("voxel size must be positive, got {}", self.voxel)));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(BenchError::Config(format!("alpha must be positive, got {a}")));
            }
        }
        Ok(())
    }
}

/// The problem spec of a scene, with the surrogate grasp model and the
/// bundled arm.
/// Field resolution for `voxel`, with a band reaching past the largest
/// hand sphere.
pub fn field_settings(voxel: f64, epsilon: f64) -> SdfSettings {
    let hand = GripperGeometry::default().spheres().iter().map(|s| s.radius).fold(0.0, f64::max);
    let mut sdf = SdfSettings::with_spacing(voxel);
    sdf.truncation = sdf.truncation.max(hand + epsilon + 2.0 * voxel);
    sdf
}

pub fn problem_spec(scene: &SceneFile, opts: &BuildOptions) -> Result<ProblemSpec> {
    opts.validate()?;
    let mut task = scene.task.to_params()?;
    if let Some(a) = opts.alpha {
        task.alpha = a;
    }
    Ok(ProblemSpec {
        object: scene.object_cloud(&scene.grasp_target),
        grasp_clutter: scene.grasp_clutter_cloud(),
        place_scene: scene.place_cloud(),
        surface: (&scene.surface).into(),
        task,
        grasp_model: Arc::new(SurrogateModel::new(SurrogateParams::default())),
        prior: PriorSettings::default(),
        arm: ArmModel::bundled(),
        gripper: GripperGeometry::default(),
        sdf: field_settings(opts.voxel, opts.epsilon),
        epsilon: opts.epsilon,
        solver: opts.solver.clone(),
    })
}

pub fn build_problem(scene: &SceneFile, opts: &BuildOptions) -> Result<Problem> {
    Ok(Problem::new(problem_spec(scene, opts)?)?)
}
