//! Generators (CNN, AHMT, PAHMT), the motion discriminator, and checkpoints.

mod checkpoint;
mod discriminator;
mod layers;
mod params;

use serde::{Deserialize, Serialize};

use crate::datapipe::{FEATURE_DIM, TOKEN_COUNT, TOKEN_DIM};
use crate::error::{Error, Result};
use crate::kinematics::JOINT_COUNT;
use crate::tensor::Tensor;
use layers::{
    activate, apply_conv, apply_linear, encoder_block, init_conv, init_encoder_block, init_linear, EncoderShape,
};
pub use layers::TrainRng;
use params::Init;

pub use checkpoint::{Checkpoint, TensorArchive, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use discriminator::{DiscConfig, Discriminator};
pub use params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Cnn,
    Ahmt,
    Pahmt,
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(Arch::Cnn),
            "ahmt" => Ok(Arch::Ahmt),
            "pahmt" => Ok(Arch::Pahmt),
            _ => Err(Error::Config(format!("unknown architecture {s:?} (expected cnn, ahmt or pahmt)"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Cnn => "cnn",
            Arch::Ahmt => "ahmt",
            Arch::Pahmt => "pahmt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

/// How the spatial representation reaches the temporal stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Average the per-frame regression-token outputs over the window, project once.
    Mean,
    /// Project and add each frame's output separately.
    PerFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub frames: usize,
    pub input_dim: usize,
    pub tokens: usize,
    pub token_dim: usize,
    pub joints: usize,
    pub d_t: usize,
    pub d_s: usize,
    pub layers_t: usize,
    pub layers_s: usize,
    pub heads_t: usize,
    pub heads_s: usize,
    pub mlp_ratio: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub fusion: Fusion,
    /// Width between the two temporal embedding convolutions.
    pub embed_width: usize,
    /// Width of the two hidden regression-head convolutions.
    pub head_width: usize,
    pub cnn_width: usize,
    pub cnn_blocks: usize,
    pub kernel: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper(Arch::Pahmt)
    }
}

impl ModelConfig {
    /// Full-size widths.
    pub fn paper(arch: Arch) -> Self {
        ModelConfig {
            arch,
            frames: 32,
            input_dim: FEATURE_DIM,
            tokens: TOKEN_COUNT,
            token_dim: TOKEN_DIM,
            joints: JOINT_COUNT,
            d_t: 512,
            d_s: 64,
            layers_t: 4,
            layers_s: 2,
            heads_t: 8,
            heads_s: 4,
            mlp_ratio: 4,
            activation: if arch == Arch::Cnn { Activation::Relu } else { Activation::Gelu },
            dropout: 0.0,
            fusion: Fusion::Mean,
            embed_width: 256,
            head_width: 256,
            cnn_width: 256,
            cnn_blocks: 4,
            kernel: 3,
            seed: 0,
        }
    }

    /// Narrow widths that train in minutes on one core.
    pub fn desk(arch: Arch) -> Self {
        ModelConfig {
            d_t: 64,
            d_s: 16,
            layers_t: 2,
            layers_s: 1,
            heads_t: 4,
            heads_s: 2,
            embed_width: 64,
            head_width: 64,
            cnn_width: 64,
            cnn_blocks: 3,
            ..Self::paper(arch)
        }
    }

    pub fn output_dim(&self) -> usize {
        self.joints * 3
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_t == 0 || self.d_s == 0 || self.heads_t == 0 || self.heads_s == 0 {
            return bad("latent widths and head counts must be positive".into());
        }
        if !self.d_t.is_multiple_of(self.heads_t) {
            return bad(format!("d_t {} is not divisible by {} heads", self.d_t, self.heads_t));
        }
        if !self.d_s.is_multiple_of(self.heads_s) {
            return bad(format!("d_s {} is not divisible by {} heads", self.d_s, self.heads_s));
        }
        if self.input_dim != self.tokens * self.token_dim {
            return bad(format!(
                "input_dim {} must equal tokens {} × token_dim {}",
                self.input_dim, self.tokens, self.token_dim
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel width {} must be odd", self.kernel));
        }
        if self.frames == 0 || self.joints == 0 || self.mlp_ratio == 0 {
            return bad("frames, joints and mlp_ratio must be positive".into());
        }
        if self.embed_width == 0 || self.head_width == 0 || self.cnn_width == 0 {
            return bad("layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    fn temporal_shape(&self) -> EncoderShape {
        EncoderShape {
            width: self.d_t,
            heads: self.heads_t,
            mlp_ratio: self.mlp_ratio,
            activation: self.activation,
            dropout: self.dropout,
        }
    }

    fn spatial_shape(&self) -> EncoderShape {
        EncoderShape {
            width: self.d_s,
            heads: self.heads_s,
            ..self.temporal_shape()
        }
    }
}

/// A generator: configuration plus its named parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let init = Init::new(config.seed);
        let mut p = ParamStore::new();
        let c = &config;
        let k = c.kernel;
        match c.arch {
            Arch::Cnn => {
                init_conv(&init, &mut p, "cnn.input", k, c.input_dim, c.cnn_width)?;
                for b in 0..c.cnn_blocks {
                    init_conv(&init, &mut p, &format!("cnn.block.{b}.conv1"), k, c.cnn_width, c.cnn_width)?;
                    init_conv(&init, &mut p, &format!("cnn.block.{b}.conv2"), k, c.cnn_width, c.cnn_width)?;
                }
                init_conv(&init, &mut p, "cnn.output", 1, c.cnn_width, c.output_dim())?;
            }
            Arch::Ahmt | Arch::Pahmt => {
                init_conv(&init, &mut p, "temporal.embed.0", k, c.input_dim, c.embed_width)?;
                init_conv(&init, &mut p, "temporal.embed.1", k, c.embed_width, c.d_t)?;
                init.zeros(&mut p, "temporal.pos", &[c.frames, c.d_t])?;
                for l in 0..c.layers_t {
                    init_encoder_block(&init, &mut p, &format!("temporal.block.{l}"), c.temporal_shape())?;
                }
                if c.arch == Arch::Pahmt {
                    init_linear(&init, &mut p, "spatial.embed", c.token_dim, c.d_s)?;
                    init.zeros(&mut p, "spatial.regress", &[c.d_s])?;
                    init.zeros(&mut p, "spatial.pos", &[c.tokens + 1, c.d_s])?;
                    for l in 0..c.layers_s {
                        init_encoder_block(&init, &mut p, &format!("spatial.block.{l}"), c.spatial_shape())?;
                    }
                    init_linear(&init, &mut p, "fusion", c.d_s, c.d_t)?;
                }
                init_conv(&init, &mut p, "head.0", k, c.d_t, c.head_width)?;
                init_conv(&init, &mut p, "head.1", k, c.head_width, c.head_width)?;
                init_conv(&init, &mut p, "head.2", 1, c.head_width, c.output_dim())?;
            }
        }
        Ok(Model { config, params: p })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes
    /// against a fresh initialization of `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = Model::new(config)?;
        if reference.params.names() != params.names() {
            return Err(Error::Format("parameter names do not match the model configuration".into()));
        }
        for ((name, a), (_, b)) in reference.params.iter().zip(params.iter()) {
            if a.shape() != b.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, configuration expects {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(Model {
            config: reference.config,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Copy whose parameters do not track gradients.
    pub fn frozen(&self) -> Model {
        Model {
            config: self.config.clone(),
            params: self.params.frozen(),
        }
    }

    fn batched(&self, x: &Tensor) -> Result<(Tensor, bool)> {
        let c = &self.config;
        let ok = |s: &[usize]| s.len() == 2 && s[0] == c.frames && s[1] == c.input_dim;
        match x.rank() {
            2 if ok(x.shape()) => Ok((x.unsqueeze(0)?, true)),
            3 if ok(&x.shape()[1..]) => Ok((x.clone(), false)),
            _ => Err(Error::Shape {
                op: "model input (expected [frames, input_dim] or a batch of them)",
                lhs: x.shape().to_vec(),
                rhs: vec![c.frames, c.input_dim],
            }),
        }
    }

    fn unbatch(&self, y: Tensor, single: bool) -> Result<Tensor> {
        let (b, f) = (y.shape()[0], y.shape()[1]);
        if single {
            y.reshape(&[f, self.config.joints, 3])
        } else {
            y.reshape(&[b, f, self.config.joints, 3])
        }
    }

    /// Dispatches on the configured architecture. `x` is `[f, 138]` or
    /// `[B, f, 138]`; the output is `[f, J, 3]` or `[B, f, J, 3]`. Passing an
    /// rng enables training-mode dropout.
    pub fn forward(&self, x: &Tensor, rng: TrainRng) -> Result<Tensor> {
        match self.config.arch {
            Arch::Cnn => self.cnn_forward(x),
            Arch::Ahmt => self.ahmt_forward(x, rng),
            Arch::Pahmt => self.pahmt_forward(x, rng),
        }
    }

    /// Two embedding convolutions, positional embedding, then the encoder
    /// stack. Returns `[B, f, d_t]`.
    pub fn temporal_encode(&self, x: &Tensor, mut rng: TrainRng) -> Result<Tensor> {
        let (x, _) = self.batched(x)?;
        let p = &self.params;
        let h = activate(&apply_conv(p, "temporal.embed.0", &x)?, self.config.activation);
        let mut z = apply_conv(p, "temporal.embed.1", &h)?.add_trailing(p.get("temporal.pos")?)?;
        for l in 0..self.config.layers_t {
            z = encoder_block(p, &format!("temporal.block.{l}"), &z, self.config.temporal_shape(), &mut rng)?;
        }
        Ok(z)
    }

    /// Per-frame spatial transformer over `[N, 46, 3]` tokens; returns the
    /// regression-token output `[N, d_s]`.
    pub fn spatial_encode(&self, tokens: &Tensor, mut rng: TrainRng) -> Result<Tensor> {
        let c = &self.config;
        if tokens.rank() != 3 || tokens.shape()[1] != c.tokens || tokens.shape()[2] != c.token_dim {
            return Err(Error::Shape {
                op: "spatial_encode",
                lhs: tokens.shape().to_vec(),
                rhs: vec![c.tokens, c.token_dim],
            });
        }
        let p = &self.params;
        let n = tokens.shape()[0];
        let emb = apply_linear(p, "spatial.embed", tokens)?;
        let reg = p.get("spatial.regress")?.reshape(&[1, 1, c.d_s])?.expand(0, n)?;
        let mut z = Tensor::concat(&[reg, emb], 1)?.add_trailing(p.get("spatial.pos")?)?;
        for l in 0..c.layers_s {
            z = encoder_block(p, &format!("spatial.block.{l}"), &z, c.spatial_shape(), &mut rng)?;
        }
        z.slice(1, 0, 1)?.reshape(&[n, c.d_s])
    }

    fn regression_head(&self, z: &Tensor) -> Result<Tensor> {
        let p = &self.params;
        let act = self.config.activation;
        let h = activate(&apply_conv(p, "head.0", z)?, act);
        let h = activate(&apply_conv(p, "head.1", &h)?, act);
        apply_conv(p, "head.2", &h)
    }

    /// Temporal branch only. On a PAHMT model this skips the spatial branch.
    pub fn ahmt_forward(&self, x: &Tensor, rng: TrainRng) -> Result<Tensor> {
        if self.config.arch == Arch::Cnn {
            return Err(Error::Contract("ahmt_forward needs a transformer model".into()));
        }
        let (_, single) = self.batched(x)?;
        let z = self.temporal_encode(x, rng)?;
        self.unbatch(self.regression_head(&z)?, single)
    }

    pub fn pahmt_forward(&self, x: &Tensor, mut rng: TrainRng) -> Result<Tensor> {
        if self.config.arch != Arch::Pahmt {
            return Err(Error::Contract("pahmt_forward needs a pahmt model".into()));
        }
        let c = &self.config;
        let (xb, single) = self.batched(x)?;
        let (b, f) = (xb.shape()[0], xb.shape()[1]);
        let z_t = self.temporal_encode(&xb, rng.as_deref_mut())?;
        let tokens = xb.reshape(&[b * f, c.tokens, c.token_dim])?;
        let z_s = self.spatial_encode(&tokens, rng)?.reshape(&[b, f, c.d_s])?;
        let fused = match c.fusion {
            Fusion::Mean => {
                let pooled = z_s.mean_axis(1)?;
                apply_linear(&self.params, "fusion", &pooled)?.unsqueeze(1)?.expand(1, f)?
            }
            Fusion::PerFrame => apply_linear(&self.params, "fusion", &z_s)?,
        };
        self.unbatch(self.regression_head(&z_t.add(&fused)?)?, single)
    }

    /// Residual temporal convolution stack.
    pub fn cnn_forward(&self, x: &Tensor) -> Result<Tensor> {
        if self.config.arch != Arch::Cnn {
            return Err(Error::Contract("cnn_forward needs a cnn model".into()));
        }
        let (x, single) = self.batched(x)?;
        let p = &self.params;
        let act = self.config.activation;
        let mut h = activate(&apply_conv(p, "cnn.input", &x)?, act);
        for b in 0..self.config.cnn_blocks {
            let r = activate(&apply_conv(p, &format!("cnn.block.{b}.conv1"), &h)?, act);
            let r = apply_conv(p, &format!("cnn.block.{b}.conv2"), &r)?;
            h = activate(&h.add(&r)?, act);
        }
        self.unbatch(apply_conv(p, "cnn.output", &h)?, single)
    }

    /// Frames on each side of `t` that can influence output `t`.
    pub fn receptive_radius(&self) -> usize {
        let r = (self.config.kernel - 1) / 2;
        match self.config.arch {
            Arch::Cnn => r * (1 + 2 * self.config.cnn_blocks),
            _ => self.config.frames,
        }
    }

    /// Short content hash of the configuration and parameter values.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (name, t) in self.params.iter() {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
