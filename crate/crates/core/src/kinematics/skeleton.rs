use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rotation::{norm, Vec3};
use crate::error::{Error, Result};

pub const JOINT_COUNT: usize = 48;
pub const ARM_JOINTS_PER_SIDE: usize = 3;
pub const HAND_JOINTS_PER_SIDE: usize = 21;
pub const ARM_JOINT_COUNT: usize = 2 * ARM_JOINTS_PER_SIDE;
pub const HAND_JOINT_COUNT: usize = 2 * HAND_JOINTS_PER_SIDE;

const DEFAULT_SKELETON: &str = include_str!("../../assets/skeleton_default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Arm,
    Hand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub offset: Vec3,
    pub role: Role,
    pub side: Side,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SkeletonFile {
    name: String,
    #[serde(rename = "joint")]
    joints: Vec<Joint>,
}

/// A 48-joint arm-and-hand hierarchy.
///
/// Layout per side: shoulder, elbow, wrist, then 21 hand joints whose first
/// entry sits at the wrist. `arm_joints` lists left shoulder/elbow/wrist then
/// right; `hand_joints` lists the 21 left hand joints then the 21 right ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    name: String,
    joints: Vec<Joint>,
    parents: Vec<Option<usize>>,
    arm_joints: Vec<usize>,
    hand_joints: Vec<usize>,
}

impl Skeleton {
    pub fn from_joints(name: impl Into<String>, joints: Vec<Joint>) -> Result<Self> {
        if joints.len() != JOINT_COUNT {
            return Err(Error::Skeleton(format!(
                "expected {JOINT_COUNT} joints, found {}",
                joints.len()
            )));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut parents = Vec::with_capacity(joints.len());
        for (i, j) in joints.iter().enumerate() {
            let parent = match &j.parent {
                None => None,
                Some(p) => Some(*index.get(p.as_str()).ok_or_else(|| {
                    Error::Skeleton(format!(
                        "joint {:?} names parent {p:?} which is not listed before it",
                        j.name
                    ))
                })?),
            };
            if index.insert(j.name.as_str(), i).is_some() {
                return Err(Error::Skeleton(format!("duplicate joint name {:?}", j.name)));
            }
            parents.push(parent);
        }

        let mut arm_joints = Vec::new();
        let mut hand_joints = Vec::new();
        for side in [Side::Left, Side::Right] {
            let arm: Vec<usize> = (0..joints.len())
                .filter(|&i| joints[i].side == side && joints[i].role == Role::Arm)
                .collect();
            let hand: Vec<usize> = (0..joints.len())
                .filter(|&i| joints[i].side == side && joints[i].role == Role::Hand)
                .collect();
            if arm.len() != ARM_JOINTS_PER_SIDE || hand.len() != HAND_JOINTS_PER_SIDE {
                return Err(Error::Skeleton(format!(
                    "{side:?} side has {} arm and {} hand joints, expected {ARM_JOINTS_PER_SIDE} and {HAND_JOINTS_PER_SIDE}",
                    arm.len(),
                    hand.len()
                )));
            }
            // shoulder -> elbow -> wrist -> hand root must be a chain
            if parents[arm[1]] != Some(arm[0])
                || parents[arm[2]] != Some(arm[1])
                || parents[hand[0]] != Some(arm[2])
            {
                return Err(Error::Skeleton(format!(
                    "{side:?} arm must chain shoulder -> elbow -> wrist -> hand root"
                )));
            }
            for &h in &hand[1..] {
                if norm(joints[h].offset) == 0.0 {
                    return Err(Error::Skeleton(format!(
                        "finger bone {:?} has a zero rest offset",
                        joints[h].name
                    )));
                }
            }
            arm_joints.extend(arm);
            hand_joints.extend(hand);
        }
        Ok(Skeleton {
            name: name.into(),
            joints,
            parents,
            arm_joints,
            hand_joints,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SkeletonFile =
            toml::from_str(text).map_err(|e| Error::Skeleton(format!("parse: {e}")))?;
        Self::from_joints(file.name, file.joints)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        let file = SkeletonFile {
            name: self.name.clone(),
            joints: self.joints.clone(),
        };
        toml::to_string(&file).expect("skeleton serializes")
    }

    /// The anthropometric T-pose shipped with the crate.
    pub fn default_rest() -> Self {
        Self::from_toml_str(DEFAULT_SKELETON).expect("bundled skeleton is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn offset(&self, joint: usize) -> Vec3 {
        self.joints[joint].offset
    }

    pub fn arm_joints(&self) -> &[usize] {
        &self.arm_joints
    }

    pub fn hand_joints(&self) -> &[usize] {
        &self.hand_joints
    }

    /// The 21 hand joints of one side; the first is the hand root at the wrist.
    pub fn hand_of(&self, side: Side) -> &[usize] {
        match side {
            Side::Left => &self.hand_joints[..HAND_JOINTS_PER_SIDE],
            Side::Right => &self.hand_joints[HAND_JOINTS_PER_SIDE..],
        }
    }

    /// Shoulder, elbow and wrist indices of one side.
    pub fn arm_of(&self, side: Side) -> [usize; 3] {
        let a = match side {
            Side::Left => &self.arm_joints[..3],
            Side::Right => &self.arm_joints[3..],
        };
        [a[0], a[1], a[2]]
    }

    pub fn with_offsets(&self, offsets: &[Vec3]) -> Result<Self> {
        let mut joints = self.joints.clone();
        for (j, o) in joints.iter_mut().zip(offsets) {
            j.offset = *o;
        }
        Self::from_joints(self.name.clone(), joints)
    }

    /// Content hash of the joint table; checkpoints and datasets record it.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for j in &self.joints {
            h.update(j.name.as_bytes());
            h.update([0]);
            h.update(j.parent.as_deref().unwrap_or("").as_bytes());
            h.update([0]);
            for v in j.offset {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_skeleton_layout() {
        let s = Skeleton::default_rest();
        assert_eq!(s.joint_count(), 48);
        assert_eq!(s.arm_joints().len(), 6);
        assert_eq!(s.hand_joints().len(), 42);
        let mut all: Vec<usize> = s.arm_joints().iter().chain(s.hand_joints()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..48).collect::<Vec<_>>());
        for j in 0..48 {
            if let Some(p) = s.parent(j) {
                assert!(p < j);
            }
        }
    }

    #[test]
    fn toml_round_trip() {
        let s = Skeleton::default_rest();
        let back = Skeleton::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.fingerprint(), back.fingerprint());
    }

    #[test]
    fn rejects_forward_parent_reference() {
        let s = Skeleton::default_rest();
        let mut joints = s.joints().to_vec();
        joints.swap(1, 2);
        assert!(Skeleton::from_joints("bad", joints).is_err());
    }

    #[test]
    fn rejects_zero_finger_bone() {
        let s = Skeleton::default_rest();
        let mut joints = s.joints().to_vec();
        joints[s.hand_joints()[5]].offset = [0.0; 3];
        assert!(Skeleton::from_joints("bad", joints).is_err());
    }

    #[test]
    fn rejects_wrong_count() {
        let s = Skeleton::default_rest();
        let joints = s.joints()[..47].to_vec();
        assert!(Skeleton::from_joints("bad", joints).is_err());
    }
}
