//! Joint grasp and placement planning.
//!
//! The crate solves for a multi-fingered grasp and an object placement
//! together, as one constrained maximum-a-posteriori problem: the product of
//! a grasp success model and a task-specific placement likelihood is
//! maximized subject to arm kinematics, joint limits, the placement surface,
//! and collision constraints evaluated on a truncated signed-distance field of
//! the placement scene.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod costs;
mod error;
pub mod geom;
pub mod grasp;
pub mod planner;
pub mod robot;
pub mod sdf;

pub use error::{Error, Result};
