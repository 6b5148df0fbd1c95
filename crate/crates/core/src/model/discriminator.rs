use serde::{Deserialize, Serialize};

use super::layers::{apply_conv, apply_linear, init_conv, init_linear};
use super::params::{Init, ParamStore};
use crate::error::{Error, Result};
use crate::kinematics::JOINT_COUNT;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscConfig {
    pub input_dim: usize,
    /// Output widths of the temporal convolutions.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub slope: f64,
    pub seed: u64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            input_dim: JOINT_COUNT * 3,
            widths: vec![128, 128, 64],
            kernel: 3,
            slope: 0.2,
            seed: 1,
        }
    }
}

impl DiscConfig {
    pub fn desk() -> Self {
        DiscConfig {
            widths: vec![64, 64, 32],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) || self.kernel.is_multiple_of(2) || self.input_dim == 0 {
            return Err(Error::Config(format!(
                "discriminator needs positive widths and an odd kernel, got {:?} / {}",
                self.widths, self.kernel
            )));
        }
        Ok(())
    }
}

/// Scores whole rotation windows: convolutions, leaky ReLU, mean over time,
/// linear, sigmoid.
#[derive(Debug, Clone)]
pub struct Discriminator {
    config: DiscConfig,
    params: ParamStore,
}

impl Discriminator {
    pub fn new(config: DiscConfig) -> Result<Self> {
        config.validate()?;
        let init = Init::new(config.seed);
        let mut p = ParamStore::new();
        let mut c_in = config.input_dim;
        for (i, &w) in config.widths.iter().enumerate() {
            init_conv(&init, &mut p, &format!("disc.conv.{i}"), config.kernel, c_in, w)?;
            c_in = w;
        }
        init_linear(&init, &mut p, "disc.out", c_in, 1)?;
        Ok(Discriminator { config, params: p })
    }

    pub fn from_params(config: DiscConfig, params: ParamStore) -> Result<Self> {
        let reference = Discriminator::new(config)?;
        let same = reference.params.names() == params.names()
            && reference.params.iter().zip(params.iter()).all(|(a, b)| a.1.shape() == b.1.shape());
        if !same {
            return Err(Error::Format("discriminator parameters do not match its configuration".into()));
        }
        Ok(Discriminator {
            config: reference.config,
            params,
        })
    }

    pub fn config(&self) -> &DiscConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `x` is `[B, f, J, 3]` or `[B, f, J·3]`; returns `[B]` probabilities.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() < 3 || x.shape()[2..].iter().product::<usize>() != self.config.input_dim {
            return Err(Error::Shape {
                op: "discriminate",
                lhs: x.shape().to_vec(),
                rhs: vec![self.config.input_dim],
            });
        }
        let (b, f) = (x.shape()[0], x.shape()[1]);
        let mut h = x.reshape(&[b, f, self.config.input_dim])?;
        for i in 0..self.config.widths.len() {
            h = apply_conv(&self.params, &format!("disc.conv.{i}"), &h)?.leaky_relu(self.config.slope);
        }
        let pooled = h.mean_axis(1)?;
        Ok(apply_linear(&self.params, "disc.out", &pooled)?.reshape(&[b])?.sigmoid())
    }
}
