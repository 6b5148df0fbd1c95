//! Metrics, whole-clip prediction, evaluation reports and the ablation harness.

mod ablation;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::datapipe::{assemble_features, preprocess, KeypointClip, MotionClip, ARM_VECTORS, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::kinematics::Skeleton;
use crate::model::Model;
use crate::tensor::Tensor;
use crate::train::Mode;

pub use ablation::{
    default_rows, render_table, run_ablation, AblationData, AblationResult, AblationRow, AblationSpec, RowStatus,
};
pub use metrics::{
    inter_frame_difference, mpjpe, mpjpe_hand_local, mpjpe_positions, mpjre, mpjre_geodesic, positions,
};

/// Window starts for whole-clip inference: stride `f`, with a final window
/// aligned to the clip end when `f` does not divide `T`.
pub fn stitch_starts(frames: usize, f: usize) -> Result<Vec<usize>> {
    if frames < f || f == 0 {
        return Err(Error::ClipTooShort { frames, window: f });
    }
    let mut starts: Vec<usize> = (0..=frames - f).step_by(f).collect();
    if starts.last().map(|s| s + f) != Some(frames) {
        starts.push(frames - f);
    }
    Ok(starts)
}

/// Runs the generator over a whole clip of raw keypoints and averages
/// overlapping window outputs per frame. Returns `T × J × 3` rotations.
pub fn predict_clip(model: &Model, keypoints: &KeypointClip, mode: Mode) -> Result<Vec<f64>> {
    let c = model.config();
    let f = c.frames;
    let t_len = keypoints.frame_count();
    let starts = stitch_starts(t_len, f)?;
    let clean = preprocess(keypoints);
    let mut feats: Vec<[f64; FEATURE_DIM]> = clean.frames.iter().map(assemble_features).collect();
    if mode == Mode::H2h {
        feats.iter_mut().for_each(|v| v[..ARM_VECTORS * 3].iter_mut().for_each(|x| *x = 0.0));
    }
    let per = c.output_dim();
    let mut sum = vec![0.0; t_len * per];
    let mut count = vec![0usize; t_len];
    for chunk in starts.chunks(64) {
        let mut data = Vec::with_capacity(chunk.len() * f * FEATURE_DIM);
        for &s in chunk {
            feats[s..s + f].iter().for_each(|v| data.extend_from_slice(v));
        }
        let x = Tensor::new(&[chunk.len(), f, FEATURE_DIM], data)?;
        let y = model.forward(&x, None)?;
        for (w, &s) in chunk.iter().enumerate() {
            let out = &y.data()[w * f * per..(w + 1) * f * per];
            for t in 0..f {
                count[s + t] += 1;
                sum[(s + t) * per..(s + t + 1) * per]
                    .iter_mut()
                    .zip(&out[t * per..(t + 1) * per])
                    .for_each(|(a, b)| *a += b);
            }
        }
    }
    for (t, &n) in count.iter().enumerate() {
        sum[t * per..(t + 1) * per].iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    pub clip: usize,
    pub frames: usize,
    pub mpjpe_hands: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpjpe_overall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpjre_arms: Option<f64>,
}

/// Metrics over a set of clips. Arm and whole-body entries are absent in
/// hand-only mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub clips: usize,
    pub frames: usize,
    /// Hand joints, each hand in its own frame (meters).
    pub mpjpe_hands: f64,
    /// All 48 joints, body root at the origin (meters).
    pub mpjpe_overall: Option<f64>,
    pub mpjpe_arms: Option<f64>,
    /// Hand joints in the body frame; with `mpjpe_arms` this partitions `mpjpe_overall`.
    pub mpjpe_hands_body: Option<f64>,
    /// Mean absolute axis-angle component error of the arm joints (radians).
    pub mpjre_arms: Option<f64>,
    /// Mean relative rotation angle of the arm joints (radians).
    pub mpjre_arms_geodesic: Option<f64>,
    /// Mean absolute frame-to-frame change of the predicted supervised joints.
    pub inter_frame: f64,
    pub per_clip: Vec<ClipReport>,
    pub model_fingerprint: String,
    pub skeleton_fingerprint: String,
}

/// One clip's predicted and ground-truth rotations.
pub struct ClipPrediction {
    pub clip: usize,
    pub pred: Vec<f64>,
    pub target: Vec<f64>,
}

pub fn report(
    predictions: &[ClipPrediction],
    skeleton: &Skeleton,
    mode: Mode,
    model_fingerprint: &str,
) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::Contract("nothing to evaluate".into()));
    }
    let j = skeleton.joint_count();
    let all: Vec<usize> = (0..j).collect();
    let (arms, hands) = (skeleton.arm_joints(), skeleton.hand_joints());
    let supervised = if mode == Mode::H2h { hands } else { &all[..] };
    let mut pred = Vec::new();
    let mut target = Vec::new();
    let mut per_clip = Vec::new();
    let mut inter = 0.0;
    let mut inter_weight = 0.0;
    for p in predictions {
        let frames = p.pred.len() / (j * 3);
        per_clip.push(ClipReport {
            clip: p.clip,
            frames,
            mpjpe_hands: mpjpe_hand_local(&p.pred, &p.target, skeleton)?,
            mpjpe_overall: (mode == Mode::Ah2ah)
                .then(|| mpjpe(&p.pred, &p.target, skeleton, &all))
                .transpose()?,
            mpjre_arms: (mode == Mode::Ah2ah).then(|| mpjre(&p.pred, &p.target, j, arms)).transpose()?,
        });
        if frames >= 2 {
            inter += inter_frame_difference(&p.pred, j, supervised)? * (frames - 1) as f64;
            inter_weight += (frames - 1) as f64;
        }
        pred.extend_from_slice(&p.pred);
        target.extend_from_slice(&p.target);
    }
    let ah = mode == Mode::Ah2ah;
    let body = if ah {
        Some((positions(&pred, skeleton)?, positions(&target, skeleton)?))
    } else {
        None
    };
    let body_metric = |subset: &[usize]| -> Result<Option<f64>> {
        body.as_ref().map(|(p, t)| mpjpe_positions(p, t, j, subset)).transpose()
    };
    Ok(EvalReport {
        mode,
        clips: predictions.len(),
        frames: pred.len() / (j * 3),
        mpjpe_hands: mpjpe_hand_local(&pred, &target, skeleton)?,
        mpjpe_overall: body_metric(&all)?,
        mpjpe_arms: body_metric(arms)?,
        mpjpe_hands_body: body_metric(hands)?,
        mpjre_arms: ah.then(|| mpjre(&pred, &target, j, arms)).transpose()?,
        mpjre_arms_geodesic: ah.then(|| mpjre_geodesic(&pred, &target, j, arms)).transpose()?,
        inter_frame: if inter_weight > 0.0 { inter / inter_weight } else { 0.0 },
        per_clip,
        model_fingerprint: model_fingerprint.to_string(),
        skeleton_fingerprint: skeleton.fingerprint(),
    })
}

/// Predicts every clip with `model` and reports against the ground truth.
pub fn evaluate(
    model: &Model,
    clips: &[(usize, MotionClip, KeypointClip)],
    skeleton: &Skeleton,
    mode: Mode,
) -> Result<EvalReport> {
    let frozen = model.frozen();
    let predictions = clips
        .iter()
        .map(|(i, motion, keypoints)| {
            Ok(ClipPrediction {
                clip: *i,
                pred: predict_clip(&frozen, keypoints, mode)?,
                target: motion.rotations().to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    report(&predictions, skeleton, mode, &model.fingerprint())
}
