use super::{assemble_features, KeypointClip, MotionClip, FEATURE_DIM};
use crate::error::{Error, Result};

pub const WINDOW_LEN: usize = 32;
pub const WINDOW_STEP: usize = 5;

/// `f` aligned frames of features and target rotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub clip: usize,
    pub start: usize,
    pub len: usize,
    /// `len × 138`.
    pub features: Vec<f64>,
    /// `len × J × 3` axis-angle targets.
    pub targets: Vec<f64>,
}

/// Start frames of every full window: 0, step, 2·step, … while the window fits.
pub fn make_windows(frames: usize, len: usize, step: usize) -> Result<Vec<usize>> {
    if len == 0 || step == 0 {
        return Err(Error::Contract("window length and step must be positive".into()));
    }
    if frames < len {
        return Err(Error::ClipTooShort { frames, window: len });
    }
    Ok((0..=frames - len).step_by(step).collect())
}

/// Cuts a clip into windows. `keypoints` must already be preprocessed.
pub fn windows_for_clip(
    clip_index: usize,
    motion: &MotionClip,
    keypoints: &KeypointClip,
    len: usize,
    step: usize,
) -> Result<Vec<Window>> {
    if motion.frame_count() != keypoints.frame_count() {
        return Err(Error::Contract(format!(
            "motion has {} frames, keypoints {}",
            motion.frame_count(),
            keypoints.frame_count()
        )));
    }
    let per_frame = motion.joint_count() * 3;
    let starts = make_windows(motion.frame_count(), len, step)?;
    Ok(starts
        .into_iter()
        .map(|s| {
            let mut features = Vec::with_capacity(len * FEATURE_DIM);
            for f in &keypoints.frames[s..s + len] {
                features.extend_from_slice(&assemble_features(f));
            }
            Window {
                clip: clip_index,
                start: s,
                len,
                features,
                targets: motion.rotations()[s * per_frame..(s + len) * per_frame].to_vec(),
            }
        })
        .collect())
}
