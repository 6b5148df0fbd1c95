//! Skeleton, axis-angle rotations, forward kinematics and pinhole projection.

mod camera;
mod fk;
pub mod rotation;
mod skeleton;

pub use camera::Camera;
pub use fk::{
    arm_direction_vectors, axis_angle_to_matrix_tensor, fk_chain_tensor, fk_tensor,
    forward_kinematics, Pose,
};
pub use rotation::{axis_angle_to_matrix, AxisAngle, Mat3, Vec3};
pub use skeleton::{
    Joint, Role, Side, Skeleton, ARM_JOINTS_PER_SIDE, ARM_JOINT_COUNT, HAND_JOINTS_PER_SIDE,
    HAND_JOINT_COUNT, JOINT_COUNT,
};
