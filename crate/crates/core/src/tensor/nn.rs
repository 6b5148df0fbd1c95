//! Fused neural-network primitives with hand-written backward passes.

use std::sync::Arc;

use rand::Rng;

use super::linalg::gemm;
use super::ops::split_axis;
use super::Tensor;
use crate::error::{shape_err, Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes the last axis to zero mean and unit (population) variance, then
/// applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = *x.shape().last().expect("rank >= 1");
    if d == 0 {
        return Err(Error::EmptyAxis { op: "layer_norm" });
    }
    if gain.shape() != [d] || bias.shape() != [d] {
        return shape_err("layer_norm", x.shape(), gain.shape());
    }
    let rows = x.numel() / d;
    let mut xhat = vec![0.0; x.numel()];
    let mut rstd = vec![0.0; rows];
    let mut out = vec![0.0; x.numel()];
    let (g, b) = (gain.data(), bias.data());
    for r in 0..rows {
        let v = &x.data()[r * d..(r + 1) * d];
        let mean = v.iter().sum::<f64>() / d as f64;
        let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + eps).sqrt();
        rstd[r] = s;
        for j in 0..d {
            let h = (v[j] - mean) * s;
            xhat[r * d + j] = h;
            out[r * d + j] = h * g[j] + b[j];
        }
    }
    let (xc, gc, bc) = (x.clone(), gain.clone(), bias.clone());
    Ok(Tensor::from_op(
        "layer_norm",
        x.shape().to_vec(),
        out,
        vec![x.clone(), gain.clone(), bias.clone()],
        Box::new(move |up| {
            let g = gc.data();
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            let mut dx = xc.requires_grad().then(|| vec![0.0; rows * d]);
            for r in 0..rows {
                let u = &up[r * d..(r + 1) * d];
                let h = &xhat[r * d..(r + 1) * d];
                let mut mean_dh = 0.0;
                let mut mean_dh_h = 0.0;
                for j in 0..d {
                    dgain[j] += u[j] * h[j];
                    dbias[j] += u[j];
                    let dh = u[j] * g[j];
                    mean_dh += dh;
                    mean_dh_h += dh * h[j];
                }
                mean_dh /= d as f64;
                mean_dh_h /= d as f64;
                if let Some(dx) = dx.as_mut() {
                    for j in 0..d {
                        dx[r * d + j] = rstd[r] * (u[j] * g[j] - mean_dh - h[j] * mean_dh_h);
                    }
                }
            }
            vec![
                dx,
                gc.requires_grad().then_some(dgain),
                bc.requires_grad().then_some(dbias),
            ]
        }),
    ))
}

/// Max-shifted softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::Contract(format!(
            "softmax: axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let mut y = vec![0.0; x.numel()];
    let xd = x.data();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| xd[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..n {
                let e = (xd[at(k)] - max).exp();
                y[at(k)] = e;
                total += e;
            }
            for k in 0..n {
                y[at(k)] /= total;
            }
        }
    }
    let out = Arc::new(y);
    let saved = out.clone();
    Ok(Tensor::from_op_shared(
        "softmax",
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; saved.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let dot: f64 = (0..n).map(|k| g[at(k)] * saved[at(k)]).sum();
                    for k in 0..n {
                        gx[at(k)] = saved[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Temporal convolution. `x` is `[T, c_in]` or `[B, T, c_in]`, `kernel` is
/// `[w, c_in, c_out]`; the sequence is zero-padded by `padding` on both ends,
/// so `padding = (w - 1) / 2` keeps length for odd `w`.
pub fn conv1d(x: &Tensor, kernel: &Tensor, bias: &Tensor, padding: usize) -> Result<Tensor> {
    let batched = x.rank() == 3;
    if !(x.rank() == 2 || batched) || kernel.rank() != 3 {
        return shape_err("conv1d", x.shape(), kernel.shape());
    }
    let (batch, t_in, c_in) = if batched {
        (x.shape()[0], x.shape()[1], x.shape()[2])
    } else {
        (1, x.shape()[0], x.shape()[1])
    };
    let (w, kc_in, c_out) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if kc_in != c_in || bias.shape() != [c_out] {
        return shape_err("conv1d", x.shape(), kernel.shape());
    }
    if w > t_in + 2 * padding {
        return Err(Error::Shape {
            op: "conv1d (kernel wider than padded sequence)",
            lhs: x.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    let t_out = t_in + 2 * padding - w + 1;
    let cols_w = w * c_in;
    // im2col: row (b, t) holds x[b, t + j - padding, :] for j in 0..w.
    let mut cols = vec![0.0; batch * t_out * cols_w];
    let xd = x.data();
    for b in 0..batch {
        for t in 0..t_out {
            let row = &mut cols[(b * t_out + t) * cols_w..(b * t_out + t + 1) * cols_w];
            for j in 0..w {
                let src = t + j;
                if src < padding || src - padding >= t_in {
                    continue;
                }
                let s = (b * t_in + src - padding) * c_in;
                row[j * c_in..(j + 1) * c_in].copy_from_slice(&xd[s..s + c_in]);
            }
        }
    }
    let rows = batch * t_out;
    let mut out = vec![0.0; rows * c_out];
    gemm(rows, cols_w, c_out, &cols, false, kernel.data(), false, 0.0, &mut out);
    let bd = bias.data();
    for r in out.chunks_exact_mut(c_out) {
        r.iter_mut().zip(bd).for_each(|(o, b)| *o += b);
    }
    let shape = if batched {
        vec![batch, t_out, c_out]
    } else {
        vec![t_out, c_out]
    };
    let (xc, kc, bc) = (x.clone(), kernel.clone(), bias.clone());
    Ok(Tensor::from_op(
        "conv1d",
        shape,
        out,
        vec![x.clone(), kernel.clone(), bias.clone()],
        Box::new(move |g| {
            let gk = kc.requires_grad().then(|| {
                let mut gk = vec![0.0; cols_w * c_out];
                gemm(cols_w, rows, c_out, &cols, true, g, false, 0.0, &mut gk);
                gk
            });
            let gb = bc.requires_grad().then(|| {
                let mut gb = vec![0.0; c_out];
                for r in g.chunks_exact(c_out) {
                    gb.iter_mut().zip(r).for_each(|(a, b)| *a += b);
                }
                gb
            });
            let gx = xc.requires_grad().then(|| {
                let mut gcols = vec![0.0; rows * cols_w];
                gemm(rows, c_out, cols_w, g, false, kc.data(), true, 0.0, &mut gcols);
                let mut gx = vec![0.0; batch * t_in * c_in];
                for b in 0..batch {
                    for t in 0..t_out {
                        let row = &gcols[(b * t_out + t) * cols_w..(b * t_out + t + 1) * cols_w];
                        for j in 0..w {
                            let src = t + j;
                            if src < padding || src - padding >= t_in {
                                continue;
                            }
                            let s = (b * t_in + src - padding) * c_in;
                            gx[s..s + c_in]
                                .iter_mut()
                                .zip(&row[j * c_in..(j + 1) * c_in])
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                }
                gx
            });
            vec![gx, gk, gb]
        }),
    ))
}

/// Inverted dropout. Identity outside training or when `p == 0`.
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, p: f64, train: bool, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Contract(format!("dropout probability {p} outside [0, 1)")));
    }
    if !train || p == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    x.mul(&Tensor::new(x.shape(), mask)?)
}

/// Row lookup into an embedding table `[V, D]`.
pub fn embedding(table: &Tensor, indices: &[usize]) -> Result<Tensor> {
    if table.rank() != 2 {
        return Err(Error::Contract(format!(
            "embedding table must be rank 2, got {:?}",
            table.shape()
        )));
    }
    table.index_select(0, indices)
}
