//! Architecture × objective × input-mode experiment matrix.

use std::fmt::Write as _;
use std::path::PathBuf;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{evaluate, EvalReport};
use crate::datapipe::{Dataset, KeypointClip, MotionClip, Split, Window};
use crate::error::{Error, Result};
use crate::kinematics::Skeleton;
use crate::model::{Arch, Checkpoint, ModelConfig};
use crate::train::{run, Mode, Profile, TrainConfig, TrainState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    /// Generated from the other fields when left empty.
    #[serde(default)]
    pub label: String,
    pub arch: Arch,
    pub mode: Mode,
    pub smooth: bool,
    pub fk: bool,
    #[serde(default)]
    pub gan: bool,
    /// Evaluate this checkpoint instead of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl AblationRow {
    pub fn new(arch: Arch, mode: Mode, smooth: bool, fk: bool) -> Self {
        let mut row = AblationRow {
            label: String::new(),
            arch,
            mode,
            smooth,
            fk,
            gan: false,
            checkpoint: None,
        };
        row.label = row.default_label();
        row
    }

    pub fn default_label(&self) -> String {
        let mut label = format!("{} {}", self.arch.to_string().to_uppercase(), self.mode);
        for (on, tag) in [(self.smooth, " +smooth"), (self.fk, " +fk"), (self.gan, " +gan")] {
            if on {
                label.push_str(tag);
            }
        }
        label
    }
}

/// The seven configurations of the architecture/objective ladder.
pub fn default_rows() -> Vec<AblationRow> {
    vec![
        AblationRow::new(Arch::Cnn, Mode::H2h, false, false),
        AblationRow::new(Arch::Cnn, Mode::Ah2ah, false, false),
        AblationRow::new(Arch::Cnn, Mode::Ah2ah, true, false),
        AblationRow::new(Arch::Cnn, Mode::Ah2ah, false, true),
        AblationRow::new(Arch::Cnn, Mode::Ah2ah, true, true),
        AblationRow::new(Arch::Ahmt, Mode::Ah2ah, true, true),
        AblationRow::new(Arch::Pahmt, Mode::Ah2ah, true, true),
    ]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_profile() -> Profile {
    Profile::Desk
}

/// A matrix file: rows, seeds, and the training budget shared by all rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    #[serde(default = "default_profile")]
    pub profile: Profile,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub decay_every: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default, rename = "row")]
    pub rows: Vec<AblationRow>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            profile: Profile::Desk,
            seeds: default_seeds(),
            epochs: None,
            max_steps: None,
            batch_size: None,
            decay_every: None,
            lr: None,
            model: None,
            rows: default_rows(),
        }
    }
}

impl AblationSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut spec: Self = toml::from_str(text).map_err(|e| Error::Config(format!("ablation matrix: {e}")))?;
        for row in spec.rows.iter_mut().filter(|r| r.label.is_empty()) {
            row.label = row.default_label();
        }
        Ok(spec)
    }

    /// Model configuration for a row and seed.
    pub fn model_config(&self, row: &AblationRow, seed: u64) -> ModelConfig {
        let base = match &self.model {
            Some(m) => ModelConfig {
                arch: row.arch,
                ..m.clone()
            },
            None => match self.profile {
                Profile::Desk => ModelConfig::desk(row.arch),
                Profile::Paper => ModelConfig::paper(row.arch),
            },
        };
        ModelConfig { seed, ..base }
    }

    pub fn train_config(&self, row: &AblationRow, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::profile(self.profile);
        c.smooth = row.smooth;
        c.fk = row.fk;
        c.gan = row.gan;
        c.mode = row.mode;
        c.seed = seed;
        c.disc.seed = seed.wrapping_add(1);
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        if let Some(b) = self.batch_size {
            c.batch_size = b;
        }
        if let Some(d) = self.decay_every {
            c.decay_every = d;
        }
        if let Some(lr) = self.lr {
            c.lr = lr;
        }
        c.max_steps = self.max_steps;
        c
    }
}

/// Training windows and held-out clips.
pub struct AblationData {
    pub skeleton: Skeleton,
    pub train: Vec<Window>,
    pub test: Vec<(usize, MotionClip, KeypointClip)>,
}

impl AblationData {
    pub fn from_dataset(dataset: &Dataset, window: usize, step: usize) -> Result<Self> {
        Ok(AblationData {
            skeleton: dataset.skeleton().clone(),
            train: dataset.windows(Split::Train, window, step)?,
            test: dataset.load_split(Split::Test)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub seed: u64,
    pub status: RowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
}

/// Trains (or loads) and evaluates every row for every seed. A row whose
/// checkpoint cannot be read is marked unavailable and the run continues.
pub fn run_ablation(
    spec: &AblationSpec,
    data: &AblationData,
    progress: &mut dyn FnMut(&AblationResult),
) -> Result<Vec<AblationResult>> {
    let mut out = Vec::new();
    for row in &spec.rows {
        for &seed in &spec.seeds {
            let result = match &row.checkpoint {
                Some(path) => match Checkpoint::load(path) {
                    Ok(ckpt) if ckpt.skeleton_fingerprint != data.skeleton.fingerprint() => {
                        unavailable(row, seed, format!("{} was trained on another skeleton", path.display()))
                    }
                    Ok(ckpt) if ckpt.mode != row.mode => unavailable(
                        row,
                        seed,
                        format!("{} was trained in {} mode, row expects {}", path.display(), ckpt.mode, row.mode),
                    ),
                    Ok(ckpt) => ok(row, seed, evaluate(&ckpt.model, &data.test, &data.skeleton, row.mode)?),
                    Err(e) => unavailable(row, seed, format!("{}: {e}", path.display())),
                },
                None => {
                    info!("training {} (seed {seed})", row.label);
                    let mut state = TrainState::new(
                        spec.model_config(row, seed),
                        spec.train_config(row, seed),
                        data.skeleton.fingerprint(),
                    )?;
                    run(&mut state, &data.train, &data.skeleton, &mut |_| Ok(()))?;
                    ok(row, seed, evaluate(&state.generator, &data.test, &data.skeleton, row.mode)?)
                }
            };
            if result.status == RowStatus::Unavailable {
                warn!("{}: {}", row.label, result.note.as_deref().unwrap_or("unavailable"));
            }
            progress(&result);
            out.push(result);
        }
    }
    Ok(out)
}

fn ok(row: &AblationRow, seed: u64, report: EvalReport) -> AblationResult {
    AblationResult {
        row: row.clone(),
        seed,
        status: RowStatus::Ok,
        note: None,
        report: Some(report),
    }
}

fn unavailable(row: &AblationRow, seed: u64, note: String) -> AblationResult {
    AblationResult {
        row: row.clone(),
        seed,
        status: RowStatus::Unavailable,
        note: Some(note),
        report: None,
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Text table with one line per row, metrics as medians across seeds.
pub fn render_table(results: &[AblationResult]) -> String {
    let mut rows: Vec<&AblationRow> = Vec::new();
    for r in results {
        if !rows.contains(&&r.row) {
            rows.push(&r.row);
        }
    }
    let mark = |b: bool| if b { "x" } else { " " };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:^4} {:^5} {:^6} {:^3} {:^3} {:>13} {:>15} {:>13}",
        "Arch", "h2h", "ah2ah", "Smooth", "FK", "GAN", "MPJPE(hands)", "MPJPE(overall)", "MPJRE(arms)"
    );
    for row in rows {
        let runs: Vec<&AblationResult> = results.iter().filter(|r| &r.row == row).collect();
        let reports: Vec<&EvalReport> = runs.iter().filter_map(|r| r.report.as_ref()).collect();
        let cell = |f: &dyn Fn(&EvalReport) -> Option<f64>| -> String {
            if reports.is_empty() {
                return "unavailable".into();
            }
            match median(reports.iter().filter_map(|r| f(r)).collect()) {
                Some(v) => format!("{v:.4}"),
                None => "-".into(),
            }
        };
        let _ = writeln!(
            s,
            "{:<6} {:^4} {:^5} {:^6} {:^3} {:^3} {:>13} {:>15} {:>13}",
            row.arch.to_string().to_uppercase(),
            mark(row.mode == Mode::H2h),
            mark(row.mode == Mode::Ah2ah),
            mark(row.smooth),
            mark(row.fk),
            mark(row.gan),
            cell(&|r| Some(r.mpjpe_hands)),
            cell(&|r| r.mpjpe_overall),
            cell(&|r| r.mpjre_arms),
        );
    }
    s
}
