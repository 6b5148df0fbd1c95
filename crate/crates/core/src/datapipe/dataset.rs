//! On-disk datasets: a manifest, a split file, the skeleton, and one clip file
//! per sequence.

use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    preprocess, read_clip, synthesize_one, windows_for_clip, write_clip, ClipFile, KeypointClip,
    MotionClip, SynthConfig, Window,
};
use crate::error::{Error, Result};
use crate::kinematics::{Camera, Skeleton};

pub const MANIFEST_FILE: &str = "dataset.toml";
pub const SPLIT_FILE: &str = "split.toml";
pub const SKELETON_FILE: &str = "skeleton.toml";

const TEST_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub file: String,
    pub frames: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub skeleton_fingerprint: String,
    pub split_seed: u64,
    pub synth: SynthConfig,
    pub camera: Camera,
    #[serde(rename = "clip")]
    pub clips: Vec<ClipEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    test: Vec<usize>,
}

/// Whole-sequence train/test split: a seeded shuffle, with the last tenth
/// (at least one clip when there are two or more) held out.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = if n >= 2 {
        ((n as f64 * TEST_FRACTION).round() as usize).max(1)
    } else {
        0
    };
    let mut test_idx = idx.split_off(n - test);
    idx.sort_unstable();
    test_idx.sort_unstable();
    (idx, test_idx)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
    skeleton: Skeleton,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl Dataset {
    /// Synthesizes every clip and writes the dataset under `dir`.
    pub fn create(dir: impl AsRef<Path>, config: &SynthConfig, skeleton: &Skeleton, camera: &Camera) -> Result<Self> {
        config.validate()?;
        let root = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(root.join("clips"))?;
        let mut clips = Vec::with_capacity(config.sequences);
        for i in 0..config.sequences {
            let (motion, keypoints) = synthesize_one(config, skeleton, camera, i)?;
            let file = format!("clips/clip_{i:05}.armclip");
            let bytes = ClipFile::from_motion(&motion, Some(&keypoints)).encode();
            std::fs::write(root.join(&file), &bytes)?;
            clips.push(ClipEntry {
                file,
                frames: motion.frame_count(),
                sha256: hex(&Sha256::digest(&bytes)),
            });
        }
        let (train, test) = split_indices(config.sequences, config.seed);
        let manifest = DatasetManifest {
            format_version: 1,
            skeleton_fingerprint: skeleton.fingerprint(),
            split_seed: config.seed,
            synth: config.clone(),
            camera: camera.clone(),
            clips,
        };
        let toml_err = |e: toml::ser::Error| Error::Format(e.to_string());
        std::fs::write(root.join(MANIFEST_FILE), toml::to_string(&manifest).map_err(toml_err)?)?;
        let split = SplitFile {
            train: train.clone(),
            test: test.clone(),
        };
        std::fs::write(root.join(SPLIT_FILE), toml::to_string(&split).map_err(toml_err)?)?;
        std::fs::write(root.join(SKELETON_FILE), skeleton.to_toml_string())?;
        Ok(Dataset {
            root,
            manifest,
            skeleton: skeleton.clone(),
            train,
            test,
        })
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let manifest_path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| {
            Error::Config(format!("cannot read dataset manifest {}: {e}", manifest_path.display()))
        })?;
        let manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
        let skeleton = Skeleton::load(root.join(SKELETON_FILE))?;
        if skeleton.fingerprint() != manifest.skeleton_fingerprint {
            return Err(Error::Fingerprint(format!(
                "dataset skeleton {} does not match manifest {}",
                skeleton.fingerprint(),
                manifest.skeleton_fingerprint
            )));
        }
        let split_path = root.join(SPLIT_FILE);
        let split: SplitFile = match std::fs::read_to_string(&split_path) {
            Ok(t) => toml::from_str(&t).map_err(|e| Error::Format(format!("{}: {e}", split_path.display())))?,
            Err(_) => {
                return Err(Error::Config(format!("dataset has no split file at {}", split_path.display())));
            }
        };
        let n = manifest.clips.len();
        if split.train.iter().chain(&split.test).any(|&i| i >= n) {
            return Err(Error::Format(format!("{} references a clip beyond {n}", split_path.display())));
        }
        Ok(Dataset {
            root,
            manifest,
            skeleton,
            train: split.train,
            test: split.test,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Hash over every clip file's recorded digest, in manifest order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.manifest.clips {
            h.update(c.sha256.as_bytes());
        }
        hex(&h.finalize())
    }

    /// Reads clip `index` and checks it against the manifest digest.
    pub fn load_clip(&self, index: usize) -> Result<(MotionClip, KeypointClip)> {
        let entry = &self.manifest.clips[index];
        let path = self.root.join(&entry.file);
        let bytes = std::fs::read(&path)?;
        if hex(&Sha256::digest(&bytes)) != entry.sha256 {
            return Err(Error::Integrity {
                path: path.display().to_string(),
                reason: "file digest differs from the dataset manifest".into(),
            });
        }
        let clip = ClipFile::decode(&bytes, &path.display().to_string())?;
        let motion = clip.to_motion(&self.skeleton)?;
        let keypoints = clip.keypoints.ok_or_else(|| Error::Integrity {
            path: path.display().to_string(),
            reason: "clip carries no keypoints".into(),
        })?;
        Ok((motion, keypoints))
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<(usize, MotionClip, KeypointClip)>> {
        let idx = self.indices(split);
        if idx.is_empty() {
            return Err(Error::Config(format!("dataset {} has an empty {split:?} split", self.root.display())));
        }
        idx.iter()
            .map(|&i| self.load_clip(i).map(|(m, k)| (i, m, k)))
            .collect()
    }

    /// Preprocessed windows of a split; clips shorter than `len` are skipped.
    pub fn windows(&self, split: Split, len: usize, step: usize) -> Result<Vec<Window>> {
        let mut out = Vec::new();
        for (i, motion, keypoints) in self.load_split(split)? {
            match windows_for_clip(i, &motion, &preprocess(&keypoints), len, step) {
                Ok(w) => out.extend(w),
                Err(Error::ClipTooShort { frames, window }) => {
                    warn!("skipping clip {i}: {frames} frames is shorter than the window of {window}");
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}

/// Convenience: write one clip with motion and keypoints.
pub fn write_pair(path: impl AsRef<Path>, motion: &MotionClip, keypoints: &KeypointClip) -> Result<()> {
    write_clip(path, &ClipFile::from_motion(motion, Some(keypoints)))
}

/// Convenience: read the keypoints of any clip file.
pub fn read_keypoints(path: impl AsRef<Path>) -> Result<KeypointClip> {
    let path = path.as_ref();
    read_clip(path)?.keypoints.ok_or_else(|| Error::Format(format!("{} has no keypoints", path.display())))
}
