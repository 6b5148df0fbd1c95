//! Versioned little-endian clip files with a SHA-256 trailer.
//!
//! Layout (integers u32, reals f64):
//! magic `ARMHCLIP`, version, frames T, joints J, flags, fps,
//! then if `flags & 1`: T·J·3 rotations and T·3 roots,
//! then if `flags & 2`: per frame 12 arm values and 84 hand values, followed
//! by T pairs of detection bytes,
//! then the 32-byte SHA-256 digest of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{KeypointClip, KeypointFrame, MotionClip, ARM_VECTORS, HAND_POINTS};
use crate::error::{Error, Result};
use crate::kinematics::{Skeleton, Vec3};

pub const CLIP_MAGIC: [u8; 8] = *b"ARMHCLIP";
pub const CLIP_VERSION: u32 = 1;

const HAS_MOTION: u32 = 1;
const HAS_KEYPOINTS: u32 = 2;
const DIGEST_LEN: usize = 32;

/// Rotations and roots as stored, independent of any skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionData {
    pub rotations: Vec<f64>,
    pub roots: Vec<Vec3>,
}

/// The on-disk content of a clip: motion, keypoints, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFile {
    pub frames: usize,
    pub joints: usize,
    pub fps: f64,
    pub motion: Option<MotionData>,
    pub keypoints: Option<KeypointClip>,
}

impl ClipFile {
    pub fn from_motion(motion: &MotionClip, keypoints: Option<&KeypointClip>) -> Self {
        ClipFile {
            frames: motion.frame_count(),
            joints: motion.joint_count(),
            fps: motion.fps(),
            motion: Some(MotionData {
                rotations: motion.rotations().to_vec(),
                roots: motion.roots().to_vec(),
            }),
            keypoints: keypoints.cloned(),
        }
    }

    pub fn from_keypoints(keypoints: &KeypointClip, joints: usize, fps: f64) -> Self {
        ClipFile {
            frames: keypoints.frame_count(),
            joints,
            fps,
            motion: None,
            keypoints: Some(keypoints.clone()),
        }
    }

    /// Rebuilds the motion with positions from `skeleton`.
    pub fn to_motion(&self, skeleton: &Skeleton) -> Result<MotionClip> {
        let m = self
            .motion
            .as_ref()
            .ok_or_else(|| Error::Format("clip carries no motion".into()))?;
        MotionClip::new(skeleton, self.fps, m.rotations.clone(), m.roots.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("clip serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let clip: ClipFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        clip.check()?;
        Ok(clip)
    }

    fn check(&self) -> Result<()> {
        if let Some(m) = &self.motion {
            if m.roots.len() != self.frames || m.rotations.len() != self.frames * self.joints * 3 {
                return Err(Error::Format("motion payload does not match header".into()));
            }
        }
        if let Some(k) = &self.keypoints {
            if k.frame_count() != self.frames {
                return Err(Error::Format("keypoint payload does not match header".into()));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CLIP_MAGIC);
        let flags = if self.motion.is_some() { HAS_MOTION } else { 0 }
            | if self.keypoints.is_some() { HAS_KEYPOINTS } else { 0 };
        for v in [CLIP_VERSION, self.frames as u32, self.joints as u32, flags] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.fps.to_le_bytes());
        let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
        if let Some(m) = &self.motion {
            m.rotations.iter().for_each(|&v| put(v));
            m.roots.iter().flatten().for_each(|&v| put(v));
        }
        if let Some(k) = &self.keypoints {
            for f in &k.frames {
                f.raw().into_iter().for_each(&mut put);
            }
            for f in &k.frames {
                out.extend_from_slice(&[f.valid[0] as u8, f.valid[1] as u8]);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// `source` names the file in integrity errors.
    pub fn decode(bytes: &[u8], source: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Integrity {
            path: source.to_string(),
            reason: reason.to_string(),
        };
        if bytes.len() < CLIP_MAGIC.len() + 24 + DIGEST_LEN || bytes[..8] != CLIP_MAGIC {
            return Err(bad("not a clip file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let version = r.u32()?;
        if version != CLIP_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let frames = r.u32()? as usize;
        let joints = r.u32()? as usize;
        let flags = r.u32()?;
        let fps = r.f64()?;
        let motion = if flags & HAS_MOTION != 0 {
            let rotations = r.f64s(frames * joints * 3)?;
            let roots = r.f64s(frames * 3)?.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            Some(MotionData { rotations, roots })
        } else {
            None
        };
        let keypoints = if flags & HAS_KEYPOINTS != 0 {
            let raw = r.f64s(frames * (ARM_VECTORS * 3 + HAND_POINTS * 2))?;
            let flags = r.take(frames * 2)?;
            let frames = raw
                .chunks(ARM_VECTORS * 3 + HAND_POINTS * 2)
                .zip(flags.chunks(2))
                .map(|(v, fl)| {
                    let mut f = KeypointFrame::zeros();
                    for (i, a) in f.arm.iter_mut().enumerate() {
                        a.copy_from_slice(&v[i * 3..i * 3 + 3]);
                    }
                    let hands = &v[ARM_VECTORS * 3..];
                    for (i, p) in f.hands.iter_mut().enumerate() {
                        *p = [hands[2 * i], hands[2 * i + 1]];
                    }
                    f.valid = [fl[0] != 0, fl[1] != 0];
                    f
                })
                .collect();
            Some(KeypointClip { frames })
        } else {
            None
        };
        if r.pos != body.len() {
            return Err(bad("trailing bytes after payload"));
        }
        let clip = ClipFile {
            frames,
            joints,
            fps,
            motion,
            keypoints,
        };
        clip.check().map_err(|e| bad(&e.to_string()))?;
        Ok(clip)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("clip payload truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("clip too large".into()))?)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn write_clip(path: impl AsRef<Path>, clip: &ClipFile) -> Result<()> {
    std::fs::write(path, clip.encode())?;
    Ok(())
}

pub fn read_clip(path: impl AsRef<Path>) -> Result<ClipFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    ClipFile::decode(&bytes, &path.display().to_string())
}
