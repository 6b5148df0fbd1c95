//! Synthetic arm-hand motion, keypoint preprocessing, windowing and clip files.

mod clip_io;
mod dataset;
mod preprocess;
mod synth;
mod window;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, AxisAngle, Pose, Skeleton, Vec3, HAND_JOINTS_PER_SIDE};

pub use clip_io::{read_clip, write_clip, ClipFile, MotionData, CLIP_MAGIC, CLIP_VERSION};
pub use dataset::{
    read_keypoints, split_indices, write_pair, ClipEntry, Dataset, DatasetManifest, Split, MANIFEST_FILE, SKELETON_FILE,
    SPLIT_FILE,
};
pub use preprocess::{assemble_features, fill_missing, normalize_hand, normalize_hands, preprocess, NormalizedHand};
pub use synth::{synthesize, synthesize_one, SynthConfig};
pub use window::{make_windows, windows_for_clip, Window, WINDOW_LEN, WINDOW_STEP};

/// Arm direction vectors per frame.
pub const ARM_VECTORS: usize = 4;
/// 2D hand keypoints per frame (both hands).
pub const HAND_POINTS: usize = 2 * HAND_JOINTS_PER_SIDE;
/// Raw per-frame payload: 4·3 arm values + 42·2 hand values.
pub const RAW_FRAME_DIM: usize = ARM_VECTORS * 3 + HAND_POINTS * 2;
/// Tokens per frame after zero-padding hand points to 3D.
pub const TOKEN_COUNT: usize = ARM_VECTORS + HAND_POINTS;
pub const TOKEN_DIM: usize = 3;
/// Flattened feature width, `TOKEN_COUNT * TOKEN_DIM`.
pub const FEATURE_DIM: usize = TOKEN_COUNT * TOKEN_DIM;

/// Ground-truth motion: per-frame local rotations and root positions, with
/// world joint positions kept in sync through forward kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    fps: f64,
    joints: usize,
    rotations: Vec<f64>,
    roots: Vec<Vec3>,
    positions: Vec<Vec3>,
}

impl MotionClip {
    /// `rotations` is `T × J × 3` flattened; `roots` has one entry per frame.
    pub fn new(skeleton: &Skeleton, fps: f64, rotations: Vec<f64>, roots: Vec<Vec3>) -> Result<Self> {
        let joints = skeleton.joint_count();
        if roots.is_empty() || rotations.len() != roots.len() * joints * 3 {
            return Err(Error::Contract(format!(
                "motion clip: {} rotation values for {} frames of {joints} joints",
                rotations.len(),
                roots.len()
            )));
        }
        if !(fps > 0.0) {
            return Err(Error::Contract(format!("motion clip: fps must be positive, got {fps}")));
        }
        let mut clip = MotionClip {
            fps,
            joints,
            rotations,
            roots,
            positions: Vec::new(),
        };
        clip.refresh_positions(skeleton)?;
        Ok(clip)
    }

    fn refresh_positions(&mut self, skeleton: &Skeleton) -> Result<()> {
        let mut positions = Vec::with_capacity(self.frame_count() * self.joints);
        for t in 0..self.frame_count() {
            positions.extend(forward_kinematics(skeleton, &self.pose(t))?);
        }
        self.positions = positions;
        Ok(())
    }

    /// Replaces the rotations of one frame and recomputes its positions.
    pub fn set_frame_rotations(&mut self, skeleton: &Skeleton, t: usize, values: &[f64]) -> Result<()> {
        let n = self.joints * 3;
        if values.len() != n || t >= self.frame_count() {
            return Err(Error::Contract(format!("set_frame_rotations: frame {t}, {} values", values.len())));
        }
        self.rotations[t * n..(t + 1) * n].copy_from_slice(values);
        let pos = forward_kinematics(skeleton, &self.pose(t))?;
        self.positions[t * self.joints..(t + 1) * self.joints].copy_from_slice(&pos);
        Ok(())
    }

    /// Moves the body origin of one frame and recomputes its positions.
    pub fn set_frame_root(&mut self, skeleton: &Skeleton, t: usize, root: Vec3) -> Result<()> {
        if t >= self.frame_count() {
            return Err(Error::Contract(format!("set_frame_root: frame {t} out of range")));
        }
        self.roots[t] = root;
        let pos = forward_kinematics(skeleton, &self.pose(t))?;
        self.positions[t * self.joints..(t + 1) * self.joints].copy_from_slice(&pos);
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.roots.len()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn joint_count(&self) -> usize {
        self.joints
    }

    /// All rotations, `T × J × 3` flattened.
    pub fn rotations(&self) -> &[f64] {
        &self.rotations
    }

    pub fn frame_rotations(&self, t: usize) -> &[f64] {
        let n = self.joints * 3;
        &self.rotations[t * n..(t + 1) * n]
    }

    pub fn roots(&self) -> &[Vec3] {
        &self.roots
    }

    pub fn pose(&self, t: usize) -> Pose {
        Pose::from_flat(self.frame_rotations(t), self.roots[t])
    }

    pub fn rotation(&self, t: usize, joint: usize) -> AxisAngle {
        let r = &self.frame_rotations(t)[joint * 3..joint * 3 + 3];
        AxisAngle([r[0], r[1], r[2]])
    }

    /// World joint positions of frame `t`.
    pub fn positions(&self, t: usize) -> &[Vec3] {
        &self.positions[t * self.joints..(t + 1) * self.joints]
    }
}

/// One frame of model input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrame {
    /// Left upper arm, left forearm, right upper arm, right forearm.
    pub arm: [Vec3; ARM_VECTORS],
    /// Left hand's 21 points then the right hand's; the first of each is the wrist.
    #[serde(with = "hand_points")]
    pub hands: [[f64; 2]; HAND_POINTS],
    /// Detection flags, left then right.
    pub valid: [bool; 2],
}

impl KeypointFrame {
    pub fn zeros() -> Self {
        KeypointFrame {
            arm: [[0.0; 3]; ARM_VECTORS],
            hands: [[0.0; 2]; HAND_POINTS],
            valid: [true; 2],
        }
    }

    pub fn hand(&self, side: usize) -> &[[f64; 2]] {
        &self.hands[side * HAND_JOINTS_PER_SIDE..(side + 1) * HAND_JOINTS_PER_SIDE]
    }

    pub fn hand_mut(&mut self, side: usize) -> &mut [[f64; 2]] {
        &mut self.hands[side * HAND_JOINTS_PER_SIDE..(side + 1) * HAND_JOINTS_PER_SIDE]
    }

    /// The 96 raw values: arm vectors then hand points.
    pub fn raw(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.arm.iter().flatten().copied().collect();
        v.extend(self.hands.iter().flatten());
        v
    }
}

mod hand_points {
    use super::HAND_POINTS;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[[f64; 2]; HAND_POINTS], s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[[f64; 2]; HAND_POINTS], D::Error> {
        let v: Vec<[f64; 2]> = Vec::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<_>| serde::de::Error::invalid_length(v.len(), &"42 hand points"))
    }
}

/// Per-frame keypoint observations for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointClip {
    pub frames: Vec<KeypointFrame>,
}

impl KeypointClip {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}
