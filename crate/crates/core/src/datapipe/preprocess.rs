//! Hand keypoint normalization, gap filling and feature assembly.

use super::{KeypointClip, KeypointFrame, FEATURE_DIM, TOKEN_DIM};
use crate::kinematics::HAND_JOINTS_PER_SIDE;

/// A hand's 21 points after wrist-centering and bounding-box scaling.
pub type NormalizedHand = [[f64; 2]; HAND_JOINTS_PER_SIDE];

/// Subtracts the wrist point (index 0) and divides by the width and height of
/// the tight box around all 21 points. `None` for a zero-area box.
pub fn normalize_hand(points: &[[f64; 2]]) -> Option<NormalizedHand> {
    debug_assert_eq!(points.len(), HAND_JOINTS_PER_SIDE);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let (w, h) = (hi[0] - lo[0], hi[1] - lo[1]);
    if !(w > 0.0 && h > 0.0) {
        return None;
    }
    let wrist = points[0];
    let mut out = [[0.0; 2]; HAND_JOINTS_PER_SIDE];
    for (o, p) in out.iter_mut().zip(points) {
        *o = [(p[0] - wrist[0]) / w, (p[1] - wrist[1]) / h];
    }
    Some(out)
}

/// Normalizes both hands of a frame. Hands flagged invalid, or whose box is
/// degenerate, come back zeroed and flagged invalid.
pub fn normalize_hands(frame: &KeypointFrame) -> KeypointFrame {
    let mut out = *frame;
    for side in 0..2 {
        let normalized = if frame.valid[side] {
            normalize_hand(frame.hand(side))
        } else {
            None
        };
        match normalized {
            Some(points) => out.hand_mut(side).copy_from_slice(&points),
            None => {
                out.valid[side] = false;
                out.hand_mut(side).iter_mut().for_each(|p| *p = [0.0; 2]);
            }
        }
    }
    out
}

/// Replaces each undetected hand with the most recent detected one; hands
/// missing since the first frame become zeros. Arm vectors are untouched and
/// every output flag is set.
pub fn fill_missing(clip: &KeypointClip) -> KeypointClip {
    let mut last: [Option<NormalizedHand>; 2] = [None, None];
    let frames = clip
        .frames
        .iter()
        .map(|f| {
            let mut out = *f;
            for side in 0..2 {
                if f.valid[side] {
                    let mut h = [[0.0; 2]; HAND_JOINTS_PER_SIDE];
                    h.copy_from_slice(f.hand(side));
                    last[side] = Some(h);
                } else {
                    let fill = last[side].unwrap_or([[0.0; 2]; HAND_JOINTS_PER_SIDE]);
                    out.hand_mut(side).copy_from_slice(&fill);
                }
                out.valid[side] = true;
            }
            out
        })
        .collect();
    KeypointClip { frames }
}

/// Normalization followed by gap filling.
pub fn preprocess(clip: &KeypointClip) -> KeypointClip {
    let normalized = KeypointClip {
        frames: clip.frames.iter().map(normalize_hands).collect(),
    };
    fill_missing(&normalized)
}

/// 46 tokens of 3 values, flattened: the 4 arm vectors, then the 42 hand
/// points padded as `(x, y, 0)`.
pub fn assemble_features(frame: &KeypointFrame) -> [f64; FEATURE_DIM] {
    let mut out = [0.0; FEATURE_DIM];
    for (i, v) in frame.arm.iter().enumerate() {
        out[i * TOKEN_DIM..i * TOKEN_DIM + 3].copy_from_slice(v);
    }
    let base = frame.arm.len() * TOKEN_DIM;
    for (i, p) in frame.hands.iter().enumerate() {
        out[base + i * TOKEN_DIM] = p[0];
        out[base + i * TOKEN_DIM + 1] = p[1];
    }
    out
}
