//! Seeded generator of correlated arm and hand motion with projected keypoints.
//!
//! Arm channels are per-clip offsets plus sums of low-frequency sinusoids.
//! Every hand channel blends a fixed smooth function of the same side's arm
//! state with an independent oscillation:
//! `hand = c · drive(arm) + (1 - c) · independent`, with `c` the correlation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{KeypointClip, KeypointFrame, MotionClip};
use crate::error::{Error, Result};
use crate::kinematics::rotation::{add, Vec3};
use crate::kinematics::{
    arm_direction_vectors, AxisAngle, Camera, Side, Skeleton, HAND_JOINTS_PER_SIDE,
};

/// Seed of the fixed arm→hand maps; not tied to any dataset seed.
const DRIVE_SEED: u64 = 0x5EED_A2B1_0C0F_FEE5;
const ROOT_RETRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub sequences: usize,
    pub frames: usize,
    pub fps: f64,
    pub seed: u64,
    /// Arm-hand coupling in [0, 1].
    pub correlation: f64,
    /// Per-hand, per-frame probability that detection fails, in [0, 1).
    pub dropout_rate: f64,
    /// Standard deviation of pixel noise added to projected hand points.
    pub pixel_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sequences: 500,
            frames: 400,
            fps: 30.0,
            seed: 0,
            correlation: 0.9,
            dropout_rate: 0.05,
            pixel_noise: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequences == 0 {
            return Err(Error::Config("sequences must be at least 1".into()));
        }
        if self.frames == 0 {
            return Err(Error::Config("frames must be at least 1".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::Config(format!("correlation {} outside [0, 1]", self.correlation)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.pixel_noise >= 0.0) {
            return Err(Error::Config(format!("pixel noise {} is negative", self.pixel_noise)));
        }
        Ok(())
    }
}

/// Sum of sinusoids with frequencies inside a fixed low band.
#[derive(Debug, Clone)]
struct Oscillator {
    parts: Vec<(f64, f64, f64)>,
}

impl Oscillator {
    fn sample(rng: &mut ChaCha8Rng, amplitude: f64) -> Self {
        let n = 3;
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let parts = weights
            .into_iter()
            .map(|w| {
                let freq = rng.random_range(0.15..1.2);
                let phase = rng.random_range(0.0..2.0 * PI);
                (amplitude * w / total, freq, phase)
            })
            .collect();
        Oscillator { parts }
    }

    fn at(&self, seconds: f64) -> f64 {
        self.parts
            .iter()
            .map(|&(a, f, p)| a * (2.0 * PI * f * seconds + p).sin())
            .sum()
    }
}

/// Per-component (lo, hi) offset range and oscillation amplitude for the
/// shoulder, elbow and wrist of the left arm; the right arm mirrors it.
const ARM_TEMPLATE: [[(f64, f64, f64); 3]; 3] = [
    [(-0.3, 0.3, 0.35), (-0.4, 0.4, 0.35), (-1.1, -0.3, 0.35)],
    [(-0.2, 0.2, 0.15), (-1.4, -0.2, 0.4), (-0.2, 0.2, 0.15)],
    [(-0.3, 0.3, 0.25), (-0.3, 0.3, 0.25), (-0.3, 0.3, 0.25)],
];

/// Mirror of a left-side axis-angle across the sagittal (x = 0) plane.
fn mirror(v: Vec3) -> Vec3 {
    [v[0], -v[1], -v[2]]
}

/// Rest value and swing of a hand joint component; the z component is the
/// finger curl axis.
fn hand_base(joint_in_hand: usize, component: usize) -> (f64, f64) {
    if joint_in_hand == 0 {
        return (0.0, 0.2);
    }
    match component {
        2 => (-0.4, 0.45),
        _ => (0.0, 0.12),
    }
}

/// The fixed arm→hand maps: for each of the 21×3 hand channels, a weight
/// vector over the side's 9 arm channels and a bias.
struct Drive {
    weights: Vec<[f64; 9]>,
    bias: Vec<f64>,
}

impl Drive {
    fn fixed() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(DRIVE_SEED);
        let n = HAND_JOINTS_PER_SIDE * 3;
        let weights = (0..n)
            .map(|_| {
                let mut w = [0.0; 9];
                w.iter_mut().for_each(|v| *v = rng.random_range(-1.5..1.5));
                w
            })
            .collect();
        let bias = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        Drive { weights, bias }
    }

    /// Hand channels (21×3, left-side convention) driven by left-convention
    /// arm channels.
    fn apply(&self, arm: &[f64; 9]) -> Vec<f64> {
        // arm channels are centered on the template midpoints before mixing
        let mut centered = [0.0; 9];
        for (k, c) in centered.iter_mut().enumerate() {
            let (lo, hi, amp) = ARM_TEMPLATE[k / 3][k % 3];
            *c = (arm[k] - 0.5 * (lo + hi)) / (0.5 * (hi - lo) + amp);
        }
        (0..HAND_JOINTS_PER_SIDE * 3)
            .map(|ch| {
                let (base, swing) = hand_base(ch / 3, ch % 3);
                let z: f64 = self.weights[ch].iter().zip(&centered).map(|(w, a)| w * a).sum::<f64>()
                    + self.bias[ch];
                base + swing * (z / 3.0_f64.sqrt()).tanh() * 1.4
            })
            .collect()
    }
}

fn clip_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 over (seed, index)
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates `config.sequences` clips. Clip `i` depends only on the config and
/// `i`, so clips can be produced independently.
pub fn synthesize(
    config: &SynthConfig,
    skeleton: &Skeleton,
    camera: &Camera,
) -> Result<Vec<(MotionClip, KeypointClip)>> {
    config.validate()?;
    let drive = Drive::fixed();
    (0..config.sequences)
        .map(|i| synthesize_with(config, skeleton, camera, &drive, i))
        .collect()
}

pub fn synthesize_one(
    config: &SynthConfig,
    skeleton: &Skeleton,
    camera: &Camera,
    index: usize,
) -> Result<(MotionClip, KeypointClip)> {
    config.validate()?;
    synthesize_with(config, skeleton, camera, &Drive::fixed(), index)
}

fn synthesize_with(
    config: &SynthConfig,
    skeleton: &Skeleton,
    camera: &Camera,
    drive: &Drive,
    index: usize,
) -> Result<(MotionClip, KeypointClip)> {
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(config.seed, index));
    let joints = skeleton.joint_count();
    let c = config.correlation;

    // [side][joint][component]
    let mut arm_offsets = [[[0.0; 3]; 3]; 2];
    let mut arm_osc: Vec<Oscillator> = Vec::with_capacity(18);
    for side in &mut arm_offsets {
        for (j, joint) in side.iter_mut().enumerate() {
            for (k, v) in joint.iter_mut().enumerate() {
                let (lo, hi, amp) = ARM_TEMPLATE[j][k];
                *v = rng.random_range(lo..hi);
                arm_osc.push(Oscillator::sample(&mut rng, amp));
            }
        }
    }
    let hand_osc: Vec<Oscillator> = (0..2 * HAND_JOINTS_PER_SIDE * 3)
        .map(|ch| {
            let (_, swing) = hand_base((ch / 3) % HAND_JOINTS_PER_SIDE, ch % 3);
            Oscillator::sample(&mut rng, swing * 1.4)
        })
        .collect();
    let root_drift: Vec<Oscillator> = (0..3).map(|_| Oscillator::sample(&mut rng, 0.05)).collect();
    let sample_root_base = |rng: &mut ChaCha8Rng| -> Vec3 {
        [
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.5..0.5),
        ]
    };
    let mut root_base = sample_root_base(&mut rng);

    let noise = Normal::new(0.0, config.pixel_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Synthesis(e.to_string()))?;

    let mut rotations = vec![0.0; config.frames * joints * 3];
    let mut roots = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let secs = t as f64 / config.fps;
        let frame = &mut rotations[t * joints * 3..(t + 1) * joints * 3];
        for (s, side) in [Side::Left, Side::Right].into_iter().enumerate() {
            // left-convention arm channels
            let mut arm = [0.0; 9];
            for (k, a) in arm.iter_mut().enumerate() {
                *a = arm_offsets[s][k / 3][k % 3] + arm_osc[s * 9 + k].at(secs);
            }
            let driven = drive.apply(&arm);
            let arm_ids = skeleton.arm_of(side);
            for (j, &joint) in arm_ids.iter().enumerate() {
                let v = [arm[j * 3], arm[j * 3 + 1], arm[j * 3 + 2]];
                let v = if side == Side::Right { mirror(v) } else { v };
                let v = AxisAngle(v).canonical().0;
                frame[joint * 3..joint * 3 + 3].copy_from_slice(&v);
            }
            for (h, &joint) in skeleton.hand_of(side).iter().enumerate() {
                let mut v = [0.0; 3];
                for (k, out) in v.iter_mut().enumerate() {
                    let ch = h * 3 + k;
                    let (base, _) = hand_base(h, k);
                    let independent = base + hand_osc[s * HAND_JOINTS_PER_SIDE * 3 + ch].at(secs);
                    *out = c * driven[ch] + (1.0 - c) * independent;
                }
                let v = if side == Side::Right { mirror(v) } else { v };
                let v = AxisAngle(v).canonical().0;
                frame[joint * 3..joint * 3 + 3].copy_from_slice(&v);
            }
        }
        let drift = [root_drift[0].at(secs), root_drift[1].at(secs), root_drift[2].at(secs)];
        roots.push(add(root_base, drift));
    }

    let mut motion = MotionClip::new(skeleton, config.fps, rotations, roots)?;

    let mut frames = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let mut attempt = 0;
        let projected = loop {
            let hand_points: Vec<Vec3> = skeleton
                .hand_joints()
                .iter()
                .map(|&j| motion.positions(t)[j])
                .collect();
            match camera.project(&hand_points) {
                Ok(p) => break p,
                Err(e @ Error::Projection { .. }) => {
                    attempt += 1;
                    if attempt > ROOT_RETRIES {
                        return Err(Error::Synthesis(format!(
                            "clip {index} frame {t}: no valid root placement after {ROOT_RETRIES} retries ({e})"
                        )));
                    }
                    root_base = sample_root_base(&mut rng);
                    let secs = t as f64 / config.fps;
                    let root = add(
                        root_base,
                        [root_drift[0].at(secs), root_drift[1].at(secs), root_drift[2].at(secs)],
                    );
                    motion.set_frame_root(skeleton, t, root)?;
                }
                Err(e) => return Err(e),
            }
        };
        let arm = arm_direction_vectors(skeleton, motion.positions(t))?;
        let mut frame = KeypointFrame {
            arm,
            hands: [[0.0; 2]; super::HAND_POINTS],
            valid: [true; 2],
        };
        for side in 0..2 {
            let detected = rng.random::<f64>() >= config.dropout_rate;
            frame.valid[side] = detected;
            for (k, p) in frame.hand_mut(side).iter_mut().enumerate() {
                let src = projected[side * HAND_JOINTS_PER_SIDE + k];
                let (nu, nv) = if config.pixel_noise > 0.0 {
                    (noise.sample(&mut rng), noise.sample(&mut rng))
                } else {
                    (0.0, 0.0)
                };
                *p = if detected { [src[0] + nu, src[1] + nv] } else { [0.0, 0.0] };
            }
        }
        frames.push(frame);
    }
    Ok((motion, KeypointClip { frames }))
}
