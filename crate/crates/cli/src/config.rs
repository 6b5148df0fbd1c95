//! Layered run configuration: built-in defaults, then the profile preset,
//! then an optional TOML file, then command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use armhand::datapipe::SynthConfig;
use armhand::model::{Arch, ModelConfig};
use armhand::train::{Profile, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Contents of a `--config` file. Every section is a partial overlay.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub profile: Option<Profile>,
    pub arch: Option<Arch>,
    #[serde(default)]
    pub synth: Table,
    #[serde(default)]
    pub model: Table,
    #[serde(default)]
    pub train: Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Deep-merges `patch` into `base`, keeping tables and replacing leaves.
fn merge(base: &mut Table, patch: &Table) {
    for (k, v) in patch {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(p)) => merge(b, p),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: &Table, section: &str) -> Result<T> {
    if patch.is_empty() {
        return Ok(serde_json::from_value(serde_json::to_value(base)?)?);
    }
    let mut table = Table::try_from(base).with_context(|| format!("serializing [{section}] defaults"))?;
    merge(&mut table, patch);
    Value::Table(table)
        .try_into()
        .with_context(|| format!("invalid [{section}] section"))
}

pub fn synth_config(file: &ConfigFile) -> Result<SynthConfig> {
    overlay(&SynthConfig::default(), &file.synth, "synth")
}

/// Model and training configuration for `profile` and `arch`, with the file
/// overlaid. The file may not change the architecture inside `[model]`.
pub fn model_and_train(file: &ConfigFile, profile: Profile, arch: Arch) -> Result<(ModelConfig, TrainConfig)> {
    if file.model.contains_key("arch") {
        bail!("set the architecture with the top-level `arch` key or --arch, not inside [model]");
    }
    let model = match profile {
        Profile::Desk => ModelConfig::desk(arch),
        Profile::Paper => ModelConfig::paper(arch),
    };
    let model = overlay(&model, &file.model, "model")?;
    let train = overlay(&TrainConfig::profile(profile), &file.train, "train")?;
    Ok((model, train))
}
