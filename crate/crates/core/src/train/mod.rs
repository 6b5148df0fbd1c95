//! Objective, optimizer, schedule and the adversarial training loop.

mod losses;
mod optim;
mod state;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DiscConfig;

pub use losses::{loss_fk, loss_gan_step, loss_l1, loss_smooth, LOG_FLOOR};
pub use optim::{Adam, AdamConfig};
pub use state::{
    make_batch, run, Batch, Event, LogRecord, StepLosses, TrainState, STATE_MAGIC, STATE_VERSION,
};

/// Which joints feed the model and which are supervised.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Hand keypoints in, hand rotations out: arm tokens are zeroed and only
    /// the 42 hand joints are supervised.
    H2h,
    /// Arm and hand input, all 48 joints supervised.
    #[default]
    Ah2ah,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::H2h => "h2h",
            Mode::Ah2ah => "ah2ah",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h2h" => Ok(Mode::H2h),
            "ah2ah" => Ok(Mode::Ah2ah),
            _ => Err(Error::Config(format!("unknown mode {s:?} (expected h2h or ah2ah)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile {s:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// GAN weight.
    pub lambda: f64,
    /// FK weight.
    pub beta: f64,
    /// Smoothness weight.
    pub gamma: f64,
    pub smooth: bool,
    pub fk: bool,
    pub gan: bool,
    pub mode: Mode,
    pub seed: u64,
    /// Stop after this many optimizer steps in total, if set.
    pub max_steps: Option<u64>,
    pub disc: DiscConfig,
}

impl TrainConfig {
    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 128,
            lr: 1e-3,
            lr_decay: 0.5,
            decay_every: 50,
            epochs: 300,
            adam: AdamConfig::default(),
            lambda: 0.05,
            beta: 1.0,
            gamma: 1.0,
            smooth: true,
            fk: true,
            gan: true,
            mode: Mode::Ah2ah,
            seed: 0,
            max_steps: None,
            disc: DiscConfig::default(),
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 32,
            decay_every: 10,
            epochs: 60,
            disc: DiscConfig::desk(),
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lambda < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative (lambda {}, beta {}, gamma {})",
                self.lambda, self.beta, self.gamma
            )));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) || self.decay_every == 0 {
            return Err(Error::Config("lr, lr_decay and decay_every must be positive".into()));
        }
        self.disc.validate()
    }

    /// Step schedule: `lr · lr_decay^⌊epoch / decay_every⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}
