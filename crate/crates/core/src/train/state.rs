use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{loss_fk, loss_gan_step, loss_l1, loss_smooth};
use super::optim::Adam;
use super::{Mode, TrainConfig};
use crate::datapipe::{Window, ARM_VECTORS, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::kinematics::{fk_tensor, Skeleton};
use crate::model::{Discriminator, Model, ModelConfig, TensorArchive};
use crate::tensor::Tensor;

pub const STATE_MAGIC: [u8; 8] = *b"ARMHSTAT";
pub const STATE_VERSION: u32 = 1;

/// Model-ready tensors for a set of windows.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, f, 138]`; arm values zeroed in hand-only mode.
    pub features: Tensor,
    /// `[B, f, J, 3]` target rotations.
    pub targets: Tensor,
    /// `[B, f, J, 3]` target joint positions, root at the origin.
    pub positions: Tensor,
}

pub fn make_batch(windows: &[&Window], skeleton: &Skeleton, mode: Mode) -> Result<Batch> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Contract("cannot batch zero windows".into()))?;
    let (b, f, j) = (windows.len(), first.len, skeleton.joint_count());
    let mut features = Vec::with_capacity(b * f * FEATURE_DIM);
    let mut targets = Vec::with_capacity(b * f * j * 3);
    for w in windows {
        if w.len != f || w.targets.len() != f * j * 3 {
            return Err(Error::Contract(format!(
                "window of clip {} at {} does not match the batch layout",
                w.clip, w.start
            )));
        }
        features.extend_from_slice(&w.features);
        targets.extend_from_slice(&w.targets);
    }
    if mode == Mode::H2h {
        for frame in features.chunks_exact_mut(FEATURE_DIM) {
            frame[..ARM_VECTORS * 3].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let targets = Tensor::new(&[b, f, j, 3], targets)?;
    let positions = fk_tensor(skeleton, &targets)?;
    Ok(Batch {
        features: Tensor::new(&[b, f, FEATURE_DIM], features)?,
        targets,
        positions,
    })
}

/// Loss terms of one generator step; disabled terms are `None`.
pub struct StepLosses {
    pub total: Tensor,
    pub l1: Tensor,
    pub smooth: Option<Tensor>,
    pub fk: Option<Tensor>,
    pub gan_gen: Option<Tensor>,
    pub gan_disc: Option<Tensor>,
}

impl StepLosses {
    /// Evaluates every enabled term on `pred` (`[B, f, J, 3]`).
    pub fn compute(
        config: &TrainConfig,
        pred: &Tensor,
        batch: &Batch,
        skeleton: &Skeleton,
        disc: &Discriminator,
    ) -> Result<Self> {
        // Hand-only mode supervises the hand joints; the other terms see
        // ground-truth arm rotations in place of the unsupervised outputs.
        let (sup_pred, sup_target, full) = match config.mode {
            Mode::Ah2ah => (pred.clone(), batch.targets.clone(), pred.clone()),
            Mode::H2h => {
                let hands = skeleton.hand_joints();
                let j = skeleton.joint_count();
                let mut mask = vec![0.0; j * 3];
                for &h in hands {
                    mask[h * 3..h * 3 + 3].iter_mut().for_each(|m| *m = 1.0);
                }
                let reps = pred.numel() / (j * 3);
                let keep: Vec<f64> = mask.iter().copied().cycle().take(reps * j * 3).collect();
                let drop: Vec<f64> = keep.iter().map(|m| 1.0 - m).collect();
                let full = pred
                    .mul(&Tensor::new(pred.shape(), keep)?)?
                    .add(&batch.targets.mul(&Tensor::new(pred.shape(), drop)?)?)?;
                (
                    pred.index_select(2, hands)?,
                    batch.targets.index_select(2, hands)?,
                    full,
                )
            }
        };
        let l1 = loss_l1(&sup_pred, &sup_target)?;
        let mut total = l1.clone();
        let smooth = if config.smooth {
            let s = loss_smooth(&sup_pred)?;
            total = total.add(&s.scale(config.gamma))?;
            Some(s)
        } else {
            None
        };
        let fk = if config.fk {
            let f = loss_fk(&full, &batch.positions, skeleton)?;
            total = total.add(&f.scale(config.beta))?;
            Some(f)
        } else {
            None
        };
        let (gan_gen, gan_disc) = if config.gan {
            let (g, d) = loss_gan_step(disc, &batch.targets, &full)?;
            total = total.add(&g.scale(config.lambda))?;
            (Some(g), Some(d))
        } else {
            (None, None)
        };
        Ok(StepLosses {
            total,
            l1,
            smooth,
            fk,
            gan_gen,
            gan_disc,
        })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub l1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fk: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gan_gen: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gan_disc: Option<f64>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub skeleton_fingerprint: String,
    /// Current epoch (the next one to finish).
    pub epoch: usize,
    pub step: u64,
    /// Shuffled window order of the current epoch and the position in it.
    pub order: Vec<usize>,
    pub cursor: usize,
    pub generator: Model,
    pub gen_opt: Adam,
    pub discriminator: Discriminator,
    pub disc_opt: Adam,
    pub rng: ChaCha8Rng,
    pub history: Vec<LogRecord>,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    config: TrainConfig,
    model: ModelConfig,
    skeleton_fingerprint: String,
    epoch: usize,
    step: u64,
    order: Vec<usize>,
    cursor: usize,
    gen_opt_step: u64,
    disc_opt_step: u64,
    rng: RngState,
    history: Vec<LogRecord>,
}

/// Progress notifications from [`run`].
pub enum Event<'a> {
    Step(&'a LogRecord),
    EpochEnd(&'a TrainState),
}

impl TrainState {
    pub fn new(model: ModelConfig, config: TrainConfig, skeleton_fingerprint: impl Into<String>) -> Result<Self> {
        config.validate()?;
        Ok(TrainState {
            generator: Model::new(model)?,
            gen_opt: Adam::new(config.adam),
            discriminator: Discriminator::new(config.disc.clone())?,
            disc_opt: Adam::new(config.adam),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            skeleton_fingerprint: skeleton_fingerprint.into(),
            epoch: 0,
            step: 0,
            order: Vec::new(),
            cursor: 0,
            history: Vec::new(),
        })
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs || self.config.max_steps.is_some_and(|m| self.step >= m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let hex: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        let meta = StateMeta {
            config: self.config.clone(),
            model: self.generator.config().clone(),
            skeleton_fingerprint: self.skeleton_fingerprint.clone(),
            epoch: self.epoch,
            step: self.step,
            order: self.order.clone(),
            cursor: self.cursor,
            gen_opt_step: self.gen_opt.step,
            disc_opt_step: self.disc_opt.step,
            rng: RngState {
                seed: hex,
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            history: self.history.clone(),
        };
        let mut ar = TensorArchive {
            meta: serde_json::to_string(&meta).expect("state serializes"),
            tensors: Vec::new(),
        };
        for (prefix, params, opt) in [
            ("g", self.generator.params(), &self.gen_opt),
            ("d", self.discriminator.params(), &self.disc_opt),
        ] {
            ar.push_params(&format!("{prefix}/"), params);
            for (name, t) in params.iter() {
                if let (Some(m), Some(v)) = (opt.m.get(name), opt.v.get(name)) {
                    ar.tensors.push((format!("{prefix}m/{name}"), t.shape().to_vec(), m.clone()));
                    ar.tensors.push((format!("{prefix}v/{name}"), t.shape().to_vec(), v.clone()));
                }
            }
        }
        ar.encode(STATE_MAGIC, STATE_VERSION)
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let corrupt = |reason: String| Error::Integrity {
            path: source.to_string(),
            reason,
        };
        let (ar, version) = TensorArchive::decode(bytes, STATE_MAGIC, source)?;
        if version != STATE_VERSION {
            return Err(corrupt(format!("unsupported state version {version}")));
        }
        let meta: StateMeta = serde_json::from_str(&ar.meta).map_err(|e| corrupt(format!("metadata: {e}")))?;
        let mut state = TrainState::new(meta.model.clone(), meta.config, meta.skeleton_fingerprint)?;
        let gen_params = ar.take_params("g/", state.generator.params())?;
        state.generator = Model::from_params(meta.model, gen_params)?;
        let disc_params = ar.take_params("d/", state.discriminator.params())?;
        state.discriminator = Discriminator::from_params(state.config.disc.clone(), disc_params)?;
        for (prefix, params, opt) in [
            ("g", state.generator.params(), &mut state.gen_opt),
            ("d", state.discriminator.params(), &mut state.disc_opt),
        ] {
            for (name, _) in params.iter() {
                if let (Some(m), Some(v)) = (
                    ar.get(&format!("{prefix}m/{name}")),
                    ar.get(&format!("{prefix}v/{name}")),
                ) {
                    opt.m.insert(name.to_string(), m.to_vec());
                    opt.v.insert(name.to_string(), v.to_vec());
                }
            }
        }
        state.gen_opt.step = meta.gen_opt_step;
        state.disc_opt.step = meta.disc_opt_step;
        let seed_bytes: Vec<u8> = (0..meta.rng.seed.len() / 2)
            .map(|i| u8::from_str_radix(&meta.rng.seed[2 * i..2 * i + 2], 16))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| corrupt("bad rng seed".into()))?;
        let seed: [u8; 32] = seed_bytes.try_into().map_err(|_| corrupt("bad rng seed length".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(meta.rng.stream);
        rng.set_word_pos(meta.rng.word_pos.parse().map_err(|_| corrupt("bad rng position".into()))?);
        state.rng = rng;
        state.epoch = meta.epoch;
        state.step = meta.step;
        state.order = meta.order;
        state.cursor = meta.cursor;
        state.history = meta.history;
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path)?, &path.display().to_string())
    }

    /// One generator update followed by one discriminator update.
    fn step(&mut self, windows: &[Window], skeleton: &Skeleton) -> Result<LogRecord> {
        let end = (self.cursor + self.config.batch_size).min(self.order.len());
        let picked: Vec<&Window> = self.order[self.cursor..end].iter().map(|&i| &windows[i]).collect();
        let batch = make_batch(&picked, skeleton, self.config.mode)?;
        let lr = self.config.lr_at(self.epoch);
        let pred = self.generator.forward(&batch.features, Some(&mut self.rng))?;
        let losses = StepLosses::compute(&self.config, &pred, &batch, skeleton, &self.discriminator)?;
        let record = LogRecord {
            step: self.step,
            epoch: self.epoch,
            lr,
            total: losses.total.item(),
            l1: losses.l1.item(),
            smooth: losses.smooth.as_ref().map(Tensor::item),
            fk: losses.fk.as_ref().map(Tensor::item),
            gan_gen: losses.gan_gen.as_ref().map(Tensor::item),
            gan_disc: losses.gan_disc.as_ref().map(Tensor::item),
        };
        let finite = [Some(record.total), Some(record.l1), record.smooth, record.fk, record.gan_gen, record.gan_disc]
            .into_iter()
            .flatten()
            .all(f64::is_finite);
        if !finite {
            let clips: Vec<(usize, usize)> = picked.iter().map(|w| (w.clip, w.start)).collect();
            return Err(Error::NonFinite {
                step: self.step as usize,
                epoch: self.epoch,
                detail: format!(
                    "{}; lr {lr}; windows (clip, start) {clips:?}",
                    serde_json::to_string(&record).unwrap_or_default()
                ),
            });
        }
        losses.total.backward()?;
        self.gen_opt.step(self.generator.params_mut(), lr)?;
        if let Some(d) = &losses.gan_disc {
            self.discriminator.params().zero_grads();
            d.backward()?;
            self.disc_opt.step(self.discriminator.params_mut(), lr)?;
        }
        self.cursor = end;
        self.step += 1;
        Ok(record)
    }
}

/// Trains until the configured epoch count or step cap. Shuffling happens
/// at each epoch start from the state's generator, so a state saved at any
/// step resumes into the identical continuation.
pub fn run(
    state: &mut TrainState,
    windows: &[Window],
    skeleton: &Skeleton,
    observer: &mut dyn FnMut(Event) -> Result<()>,
) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::Contract("no training windows".into()));
    }
    if skeleton.fingerprint() != state.skeleton_fingerprint {
        return Err(Error::Fingerprint(format!(
            "training state was made for skeleton {}, data uses {}",
            state.skeleton_fingerprint,
            skeleton.fingerprint()
        )));
    }
    if !state.order.is_empty() && state.order.len() != windows.len() {
        return Err(Error::Contract(format!(
            "resumed epoch covers {} windows, data has {}",
            state.order.len(),
            windows.len()
        )));
    }
    while !state.finished() {
        if state.order.is_empty() {
            state.order = (0..windows.len()).collect();
            state.order.shuffle(&mut state.rng);
            state.cursor = 0;
        }
        let record = state.step(windows, skeleton)?;
        state.history.push(record.clone());
        observer(Event::Step(&record))?;
        if state.cursor == state.order.len() {
            state.order.clear();
            state.cursor = 0;
            state.epoch += 1;
            observer(Event::EpochEnd(state))?;
        }
    }
    Ok(())
}
