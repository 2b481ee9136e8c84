//! Meshes, point clouds, 9-DoF poses, surface sampling and oriented boxes.

mod cloud;
pub mod hull2d;
pub mod io;
mod mesh;
mod obb;
mod pose;
pub mod primitives;

pub use cloud::{sample_surface, PointCloud};
pub use mesh::{closest_point_on_triangle, TriMesh, Vec3};
pub use obb::{box_from_axes, oriented_bbox, ObbResult};
pub use pose::{apply_pose, canonical_axis_angle, rotation_angle_between, yaw_rotation, Pose9D, UP};
