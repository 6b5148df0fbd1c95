//! Reconstruction, smoothness, forward-kinematics and adversarial losses.

use crate::error::{shape_err, Error, Result};
use crate::kinematics::{fk_tensor, Skeleton};
use crate::model::Discriminator;
use crate::tensor::Tensor;

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-7;

/// Mean absolute difference over all elements.
pub fn loss_l1(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return shape_err("loss_l1", pred.shape(), target.shape());
    }
    Ok(pred.sub(target)?.abs().mean())
}

/// Mean absolute inter-frame difference. `pred` is `[f, J, 3]` or
/// `[B, f, J, 3]`; the frame axis is the one before the joint axis.
pub fn loss_smooth(pred: &Tensor) -> Result<Tensor> {
    if pred.rank() < 3 {
        return Err(Error::Contract(format!(
            "loss_smooth expects [.., f, J, 3], got {:?}",
            pred.shape()
        )));
    }
    let axis = pred.rank() - 3;
    let f = pred.shape()[axis];
    if f < 2 {
        return Err(Error::Contract(format!("loss_smooth needs at least 2 frames, got {f}")));
    }
    let next = pred.slice(axis, 1, f)?;
    let prev = pred.slice(axis, 0, f - 1)?;
    Ok(next.sub(&prev)?.abs().mean())
}

/// Mean Euclidean distance between `FK(pred)` (root at the origin) and the
/// target positions, in meters.
pub fn loss_fk(pred: &Tensor, target_positions: &Tensor, skeleton: &Skeleton) -> Result<Tensor> {
    let j = skeleton.joint_count();
    if pred.rank() < 2 || pred.shape()[pred.rank() - 2] != j {
        return Err(Error::Contract(format!(
            "loss_fk: prediction {:?} does not match the {j}-joint skeleton",
            pred.shape()
        )));
    }
    let positions = fk_tensor(skeleton, pred)?;
    if positions.shape() != target_positions.shape() {
        return shape_err("loss_fk", positions.shape(), target_positions.shape());
    }
    Ok(positions.sub(target_positions)?.norm_last().mean())
}

fn neg_mean_log(p: &Tensor) -> Tensor {
    p.clamp_min(LOG_FLOOR).log().mean().neg()
}

/// `(gen_loss, disc_loss)` for one adversarial step. The discriminator loss
/// sees `fake` detached, so it never reaches the generator.
pub fn loss_gan_step(disc: &Discriminator, real: &Tensor, fake: &Tensor) -> Result<(Tensor, Tensor)> {
    let d_real = disc.forward(real)?;
    let d_fake_detached = disc.forward(&fake.detach())?;
    let disc_loss = neg_mean_log(&d_real).add(&neg_mean_log(&d_fake_detached.neg().add_scalar(1.0)))?;
    let gen_loss = neg_mean_log(&disc.forward(fake)?);
    Ok((gen_loss, disc_loss))
}
