//! Poses, point clouds, planar boxes and voxel occupancy.

mod cloud;
mod grid;
mod pose;
pub mod so3;

pub use cloud::{bounding_box_2d, centroid, transform_points, Box2, PointCloud};
pub use grid::{voxelize, GridGeometry, OccupancyGrid};
pub use pose::{
    abs_rotation, abs_rotation_matrix, euler_xyz, homogeneous_2d, wrap_angle, AbsRotationMode, Pose2, Pose3,
};
