//! Building blocks shared by the generators and the discriminator.

use rand::RngCore;

use super::params::{Init, ParamStore};
use super::Activation;
use crate::error::Result;
use crate::tensor::{bmm, conv1d, dropout, layer_norm, linear, softmax, Tensor, LAYER_NORM_EPS};

/// Training-mode randomness (dropout); `None` means evaluation mode.
pub type TrainRng<'a> = Option<&'a mut (dyn RngCore + 'static)>;

pub(crate) fn activate(x: &Tensor, act: Activation) -> Tensor {
    match act {
        Activation::Gelu => x.gelu(),
        Activation::Relu => x.relu(),
    }
}

pub(crate) fn init_linear(init: &Init, p: &mut ParamStore, name: &str, k: usize, n: usize) -> Result<()> {
    init.weight(p, &format!("{name}.weight"), &[k, n])?;
    init.zeros(p, &format!("{name}.bias"), &[n])
}

pub(crate) fn init_conv(init: &Init, p: &mut ParamStore, name: &str, w: usize, c_in: usize, c_out: usize) -> Result<()> {
    init.weight(p, &format!("{name}.weight"), &[w, c_in, c_out])?;
    init.zeros(p, &format!("{name}.bias"), &[c_out])
}

pub(crate) fn apply_linear(p: &ParamStore, name: &str, x: &Tensor) -> Result<Tensor> {
    linear(x, p.get(&format!("{name}.weight"))?, Some(p.get(&format!("{name}.bias"))?))
}

/// Same-padded temporal convolution over `[B, T, C]`.
pub(crate) fn apply_conv(p: &ParamStore, name: &str, x: &Tensor) -> Result<Tensor> {
    let k = p.get(&format!("{name}.weight"))?;
    conv1d(x, k, p.get(&format!("{name}.bias"))?, (k.shape()[0] - 1) / 2)
}

fn apply_norm(p: &ParamStore, name: &str, x: &Tensor) -> Result<Tensor> {
    layer_norm(x, p.get(&format!("{name}.gain"))?, p.get(&format!("{name}.bias"))?, LAYER_NORM_EPS)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderShape {
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub activation: Activation,
    pub dropout: f64,
}

pub(crate) fn init_encoder_block(init: &Init, p: &mut ParamStore, name: &str, s: EncoderShape) -> Result<()> {
    let d = s.width;
    for ln in ["ln1", "ln2"] {
        init.ones(p, &format!("{name}.{ln}.gain"), &[d])?;
        init.zeros(p, &format!("{name}.{ln}.bias"), &[d])?;
    }
    init_linear(init, p, &format!("{name}.attn.qkv"), d, 3 * d)?;
    init_linear(init, p, &format!("{name}.attn.out"), d, d)?;
    init_linear(init, p, &format!("{name}.mlp.fc1"), d, s.mlp_ratio * d)?;
    init_linear(init, p, &format!("{name}.mlp.fc2"), s.mlp_ratio * d, d)
}

/// Multi-head self-attention over `[N, n, d]`.
fn self_attention(p: &ParamStore, name: &str, x: &Tensor, heads: usize) -> Result<Tensor> {
    let (batch, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let dh = d / heads;
    let qkv = apply_linear(p, &format!("{name}.qkv"), x)?
        .reshape(&[batch, n, 3, heads, dh])?
        .permute(&[2, 0, 3, 1, 4])?;
    let part = |i: usize| qkv.slice(0, i, i + 1)?.reshape(&[batch * heads, n, dh]);
    let (q, k, v) = (part(0)?, part(1)?, part(2)?);
    let scores = bmm(&q, &k, false, true)?.scale(1.0 / (dh as f64).sqrt());
    let attn = softmax(&scores, 2)?;
    let out = bmm(&attn, &v, false, false)?
        .reshape(&[batch, heads, n, dh])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[batch, n, d])?;
    apply_linear(p, &format!("{name}.out"), &out)
}

/// Pre-norm block: `z' = MSA(LN(z)) + z`, then `MLP(LN(z')) + z'`.
pub(crate) fn encoder_block(p: &ParamStore, name: &str, z: &Tensor, s: EncoderShape, rng: &mut TrainRng) -> Result<Tensor> {
    let train = rng.is_some();
    let mut drop = |x: Tensor| -> Result<Tensor> {
        match rng.as_deref_mut() {
            Some(r) => dropout(&x, s.dropout, train, r),
            None => Ok(x),
        }
    };
    let a = self_attention(p, &format!("{name}.attn"), &apply_norm(p, &format!("{name}.ln1"), z)?, s.heads)?;
    let z = drop(a)?.add(z)?;
    let h = apply_linear(p, &format!("{name}.mlp.fc1"), &apply_norm(p, &format!("{name}.ln2"), &z)?)?;
    let m = apply_linear(p, &format!("{name}.mlp.fc2"), &activate(&h, s.activation))?;
    drop(m)?.add(&z)
}
