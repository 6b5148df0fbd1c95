//! Arm and hand rotation estimation from per-frame keypoints.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod datapipe;
pub mod model;
pub mod error;
pub mod eval;
pub mod kinematics;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
