//! Position and rotation error metrics over flat `T × J × 3` rotation arrays.

use crate::error::{Error, Result};
use crate::kinematics::rotation::{geodesic_angle, norm, sub};
use crate::kinematics::{forward_kinematics, Pose, Skeleton, Vec3};

fn frames_of(pred: &[f64], target: &[f64], joints: usize) -> Result<usize> {
    if pred.len() != target.len() || joints == 0 || !pred.len().is_multiple_of(joints * 3) || pred.is_empty() {
        return Err(Error::Contract(format!(
            "rotation arrays of {} and {} values do not hold whole frames of {joints} joints",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred.len() / (joints * 3))
}

fn check_subset(subset: &[usize], joints: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    if let Some(&j) = subset.iter().find(|&&j| j >= joints) {
        return Err(Error::Contract(format!("joint {j} is outside the {joints}-joint skeleton")));
    }
    Ok(())
}

/// Joint positions of every frame, root at the origin.
pub fn positions(rotations: &[f64], skeleton: &Skeleton) -> Result<Vec<Vec3>> {
    let per = skeleton.joint_count() * 3;
    let mut out = Vec::with_capacity(rotations.len() / 3);
    for frame in rotations.chunks_exact(per) {
        out.extend(forward_kinematics(skeleton, &Pose::from_flat(frame, [0.0; 3]))?);
    }
    Ok(out)
}

/// Mean distance over `subset` and all frames between two position arrays of
/// `joints` joints per frame.
pub fn mpjpe_positions(pred: &[Vec3], target: &[Vec3], joints: usize, subset: &[usize]) -> Result<f64> {
    check_subset(subset, joints)?;
    if pred.len() != target.len() || pred.is_empty() || !pred.len().is_multiple_of(joints) {
        return Err(Error::Contract("position arrays do not match".into()));
    }
    let frames = pred.len() / joints;
    let mut total = 0.0;
    for t in 0..frames {
        for &j in subset {
            total += norm(sub(pred[t * joints + j], target[t * joints + j]));
        }
    }
    Ok(total / (frames * subset.len()) as f64)
}

/// Mean per-joint position error in meters, root at the origin.
pub fn mpjpe(pred: &[f64], target: &[f64], skeleton: &Skeleton, subset: &[usize]) -> Result<f64> {
    let j = skeleton.joint_count();
    frames_of(pred, target, j)?;
    check_subset(subset, j)?;
    mpjpe_positions(&positions(pred, skeleton)?, &positions(target, skeleton)?, j, subset)
}

/// Hand error with each hand measured in its own frame: arm rotations are
/// set to identity in both inputs and positions are taken relative to the
/// hand root, so the result depends on hand rotations only.
pub fn mpjpe_hand_local(pred: &[f64], target: &[f64], skeleton: &Skeleton) -> Result<f64> {
    let j = skeleton.joint_count();
    frames_of(pred, target, j)?;
    let strip = |r: &[f64]| -> Result<Vec<Vec3>> {
        let mut r = r.to_vec();
        for frame in r.chunks_exact_mut(j * 3) {
            for &a in skeleton.arm_joints() {
                frame[a * 3..a * 3 + 3].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut pos = positions(&r, skeleton)?;
        for frame in pos.chunks_exact_mut(j) {
            for side in [crate::kinematics::Side::Left, crate::kinematics::Side::Right] {
                let hand = skeleton.hand_of(side);
                let root = frame[hand[0]];
                for &h in hand {
                    frame[h] = sub(frame[h], root);
                }
            }
        }
        Ok(pos)
    };
    mpjpe_positions(&strip(pred)?, &strip(target)?, j, skeleton.hand_joints())
}

/// Mean absolute axis-angle component difference over `subset`.
pub fn mpjre(pred: &[f64], target: &[f64], joints: usize, subset: &[usize]) -> Result<f64> {
    let frames = frames_of(pred, target, joints)?;
    check_subset(subset, joints)?;
    let mut total = 0.0;
    for t in 0..frames {
        for &j in subset {
            let at = (t * joints + j) * 3;
            total += (0..3).map(|k| (pred[at + k] - target[at + k]).abs()).sum::<f64>();
        }
    }
    Ok(total / (frames * subset.len() * 3) as f64)
}

/// Mean relative rotation angle over `subset`, in radians.
pub fn mpjre_geodesic(pred: &[f64], target: &[f64], joints: usize, subset: &[usize]) -> Result<f64> {
    let frames = frames_of(pred, target, joints)?;
    check_subset(subset, joints)?;
    let v = |s: &[f64], at: usize| [s[at], s[at + 1], s[at + 2]];
    let mut total = 0.0;
    for t in 0..frames {
        for &j in subset {
            let at = (t * joints + j) * 3;
            total += geodesic_angle(v(pred, at), v(target, at));
        }
    }
    Ok(total / (frames * subset.len()) as f64)
}

/// Mean absolute difference between consecutive frames over `subset`.
pub fn inter_frame_difference(rotations: &[f64], joints: usize, subset: &[usize]) -> Result<f64> {
    check_subset(subset, joints)?;
    let frames = rotations.len() / (joints * 3);
    if frames < 2 {
        return Err(Error::Contract("inter-frame difference needs two frames".into()));
    }
    let mut total = 0.0;
    for t in 1..frames {
        for &j in subset {
            let (a, b) = (((t - 1) * joints + j) * 3, (t * joints + j) * 3);
            total += (0..3).map(|k| (rotations[b + k] - rotations[a + k]).abs()).sum::<f64>();
        }
    }
    Ok(total / ((frames - 1) * subset.len() * 3) as f64)
}
