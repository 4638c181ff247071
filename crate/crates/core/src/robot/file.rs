//! TOML arm descriptions.
//!
//! ```toml
//! schema = "jointpnp-arm/1"
//!
//! [base]            # optional, defaults to identity
//! xyz = [0.0, 0.0, 0.0]
//! rpy = [0.0, 0.0, 0.0]
//!
//! [[joint]]         # in chain order
//! xyz = [0.0, 0.0, 0.333]
//! rpy = [0.0, 0.0, 0.0]
//! axis = [0.0, 0.0, 1.0]
//! lower = -2.96
//! upper = 2.96
//!
//! [tool]            # flange to palm
//! xyz = [0.0, 0.0, 0.1]
//! rpy = [0.0, -1.5707963267948966, 0.0]
//!
//! [[sphere]]        # palm frame
//! center = [-0.03, 0.0, 0.0]
//! radius = 0.045
//! ```
//!
//! `rpy` is roll, pitch, yaw applied as `Rz(yaw)·Ry(pitch)·Rx(roll)`.

use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use serde::Deserialize;

use super::{ArmModel, GripperGeometry, Joint, Sphere};
use crate::geom::Pose3;
use crate::{Error, Result};

pub const ARM_SCHEMA: &str = "jointpnp-arm/1";

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Frame {
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
}

impl Frame {
    fn pose(&self) -> Pose3 {
        let [r, p, y] = self.rpy;
        Pose3::from_rotation_matrix(Vector3::from(self.xyz), &Rotation3::from_euler_angles(r, p, y))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointEntry {
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
    axis: [f64; 3],
    lower: f64,
    upper: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmFile {
    schema: String,
    #[serde(default)]
    base: Frame,
    joint: Vec<JointEntry>,
    #[serde(default)]
    tool: Frame,
    #[serde(default)]
    sphere: Vec<Sphere>,
}

/// An arm with its hand spheres.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmDescription {
    pub arm: ArmModel,
    pub gripper: GripperGeometry,
}

pub fn parse_arm_file(text: &str) -> Result<ArmDescription> {
    let f: ArmFile = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    if f.schema != ARM_SCHEMA {
        return Err(Error::Format(format!("unsupported arm schema {:?}, expected {ARM_SCHEMA}", f.schema)));
    }
    let joints = f
        .joint
        .iter()
        .map(|j| Joint {
            origin: Frame { xyz: j.xyz, rpy: j.rpy }.pose(),
            axis: Vector3::from(j.axis),
            lower: j.lower,
            upper: j.upper,
        })
        .collect();
    Ok(ArmDescription {
        arm: ArmModel::new(f.base.pose(), joints, f.tool.pose())?,
        gripper: GripperGeometry::new(f.sphere)?,
    })
}

pub fn load_arm_file(path: impl AsRef<Path>) -> Result<ArmDescription> {
    parse_arm_file(&std::fs::read_to_string(path)?)
}
