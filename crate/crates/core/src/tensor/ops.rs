//! Elementwise arithmetic, activations, reductions and shape manipulation.

use std::sync::Arc;

use super::{numel, BackwardFn, GradFn, Tensor};
use crate::error::{shape_err, Error, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Splits `shape` around `axis` into (outer, extent, inner) block sizes.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Contract(format!(
            "{op}: axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

impl Tensor {
    /// Like [`Tensor::from_op`], but the output buffer is already shared so the
    /// backward closure can hold on to it.
    pub(crate) fn from_op_shared(
        op: &'static str,
        shape: Vec<usize>,
        data: Arc<Vec<f64>>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            inputs,
            backward,
        });
        Tensor::build(shape, data, requires_grad, grad_fn)
    }

    fn binary_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return shape_err(op, self.shape(), other.shape());
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(other, "add")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(other, "sub")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(other, "mul")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ga = a
                    .requires_grad()
                    .then(|| g.iter().zip(b.data()).map(|(g, b)| g * b).collect());
                let gb = b
                    .requires_grad()
                    .then(|| g.iter().zip(a.data()).map(|(g, a)| g * a).collect());
                vec![ga, gb]
            }),
        ))
    }

    /// Adds `bias` whose shape equals a trailing suffix of `self`'s shape.
    /// This is the only broadcasting the crate performs.
    pub fn add_trailing(&self, bias: &Tensor) -> Result<Tensor> {
        let (xs, bs) = (self.shape(), bias.shape());
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return shape_err("add_trailing", xs, bs);
        }
        let period = bias.numel();
        let bd = bias.data();
        let mut data = self.data().to_vec();
        for chunk in data.chunks_exact_mut(period) {
            chunk.iter_mut().zip(bd).for_each(|(a, b)| *a += b);
        }
        Ok(Tensor::from_op(
            "add_trailing",
            xs.to_vec(),
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                let mut gb = vec![0.0; period];
                for chunk in g.chunks_exact(period) {
                    gb.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                }
                vec![Some(g.to_vec()), Some(gb)]
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * c).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().map(|v| v * c).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|x| x + c).collect();
        Tensor::from_op(
            "add_scalar",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// Elementwise map with a derivative expressed in terms of input and output.
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Tensor {
        let out = Arc::new(self.data().iter().map(|&x| f(x)).collect::<Vec<_>>());
        let saved = out.clone();
        let x = self.clone();
        Tensor::from_op_shared(
            op,
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let gx = g
                    .iter()
                    .zip(x.data())
                    .zip(saved.iter())
                    .map(|((g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(
            "leaky_relu",
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor {
        // tanh through exp is cheaper than libm's tanh; the backward pass
        // reuses the saved tanh values.
        let tanh: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| {
                let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
            })
            .collect();
        let data = self.data().iter().zip(&tanh).map(|(&x, &t)| 0.5 * x * (1.0 + t)).collect();
        let x = self.clone();
        Tensor::from_op(
            "gelu",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let gx = g
                    .iter()
                    .zip(x.data())
                    .zip(&tanh)
                    .map(|((g, &x), &t)| {
                        g * (0.5 * (1.0 + t)
                            + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x))
                    })
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(
            "sigmoid",
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    pub fn tanh(&self) -> Tensor {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        self.unary("log", f64::ln, |x, _| 1.0 / x)
    }

    pub fn abs(&self) -> Tensor {
        self.unary("abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    /// `max(x, lo)`; no gradient flows through clamped entries.
    pub fn clamp_min(&self, lo: f64) -> Tensor {
        self.unary("clamp_min", move |x| x.max(lo), move |x, _| if x > lo { 1.0 } else { 0.0 })
    }

    /// Euclidean norm over the last axis. The subgradient at the origin is zero.
    pub fn norm_last(&self) -> Tensor {
        let d = *self.shape().last().expect("rank >= 1");
        let norms: Vec<f64> = self
            .data()
            .chunks_exact(d)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let mut shape = self.shape()[..self.rank() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let out = Arc::new(norms);
        let saved = out.clone();
        let x = self.clone();
        Tensor::from_op_shared(
            "norm_last",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; x.numel()];
                for (i, (chunk, out)) in x.data().chunks_exact(d).zip(gx.chunks_exact_mut(d)).enumerate() {
                    let n = saved[i];
                    if n > 0.0 {
                        let s = g[i] / n;
                        out.iter_mut().zip(chunk).for_each(|(o, x)| *o = s * x);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let m = self.data().iter().sum::<f64>() / n as f64;
        Tensor::from_op(
            "mean",
            vec![1],
            vec![m],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0] / n as f64; n])]),
        )
    }

    /// Sums over `axis`, removing it (a rank-1 input yields shape `[1]`).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, true)
    }

    fn reduce_axis(&self, axis: usize, average: bool) -> Result<Tensor> {
        check_axis("reduce_axis", self.shape(), axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let w = if average { 1.0 / n as f64 } else { 1.0 };
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &x[(o * n + k) * inner..(o * n + k + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        out.iter_mut().for_each(|v| *v *= w);
        let mut shape: Vec<usize> = self.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor::from_op(
            if average { "mean_axis" } else { "sum_axis" },
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for k in 0..n {
                        let dst = &mut gx[(o * n + k) * inner..(o * n + k + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d = s * w);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Reinterprets the shape; storage is shared with the input.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return shape_err("reshape", self.shape(), shape);
        }
        Ok(Tensor::from_op_shared(
            "reshape",
            shape.to_vec(),
            self.shared_data(),
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Contract(format!(
                "permute: {axes:?} is not a permutation of {rank} axes"
            )));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let data = permute_data(self.data(), &in_shape, axes);
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out_shape_c = out_shape.clone();
        Ok(Tensor::from_op(
            "permute",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(permute_data(g, &out_shape_c, &inverse))]),
        ))
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        let mut axes: Vec<usize> = (0..self.rank()).collect();
        if a >= axes.len() || b >= axes.len() {
            return Err(Error::Contract(format!(
                "transpose: axes ({a}, {b}) out of range for rank {}",
                self.rank()
            )));
        }
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        check_axis("concat", first.shape(), axis)?;
        for p in &parts[1..] {
            let ok = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return shape_err("concat", first.shape(), p.shape());
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &n) in parts.iter().zip(&extents) {
                data.extend_from_slice(&p.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(
            "concat",
            shape,
            data,
            parts.to_vec(),
            Box::new(move |g| {
                let mut grads: Vec<Vec<f64>> = extents.iter().map(|n| Vec::with_capacity(outer * n * inner)).collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (gp, &n) in grads.iter_mut().zip(&extents) {
                        gp.extend_from_slice(&g[offset..offset + n * inner]);
                        offset += n * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        check_axis("slice", self.shape(), axis)?;
        if start >= end || end > self.shape()[axis] {
            return Err(Error::Contract(format!(
                "slice: range {start}..{end} invalid for extent {}",
                self.shape()[axis]
            )));
        }
        let indices: Vec<usize> = (start..end).collect();
        self.gather_axis("slice", axis, &indices)
    }

    /// Picks entries along `axis` in the given order (repeats allowed).
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        check_axis("index_select", self.shape(), axis)?;
        if indices.is_empty() {
            return Err(Error::Contract("index_select: empty index list".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.shape()[axis]) {
            return Err(Error::Contract(format!(
                "index_select: index {bad} out of range for extent {}",
                self.shape()[axis]
            )));
        }
        self.gather_axis("index_select", axis, indices)
    }

    fn gather_axis(&self, op: &'static str, axis: usize, indices: &[usize]) -> Result<Tensor> {
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let m = indices.len();
        let x = self.data();
        let mut data = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            for &i in indices {
                data.extend_from_slice(&x[(o * n + i) * inner..(o * n + i + 1) * inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = m;
        let indices = indices.to_vec();
        Ok(Tensor::from_op(
            op,
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for (j, &i) in indices.iter().enumerate() {
                        let src = &g[(o * m + j) * inner..(o * m + j + 1) * inner];
                        let dst = &mut gx[(o * n + i) * inner..(o * n + i + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Repeats a size-1 axis `count` times.
    pub fn expand(&self, axis: usize, count: usize) -> Result<Tensor> {
        check_axis("expand", self.shape(), axis)?;
        if self.shape()[axis] != 1 || count == 0 {
            return Err(Error::Contract(format!(
                "expand: axis {axis} of {:?} must have extent 1",
                self.shape()
            )));
        }
        self.gather_axis("expand", axis, &vec![0; count])
    }

    /// Inserts a size-1 axis at `axis`.
    pub fn unsqueeze(&self, axis: usize) -> Result<Tensor> {
        if axis > self.rank() {
            return Err(Error::Contract(format!("unsqueeze: axis {axis} > rank {}", self.rank())));
        }
        let mut shape = self.shape().to_vec();
        shape.insert(axis, 1);
        self.reshape(&shape)
    }
}

pub(crate) fn permute_data(x: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = x.len();
    let mut out = Vec::with_capacity(total);
    if rank == 0 {
        return x.to_vec();
    }
    // Innermost output axis is walked in a tight loop.
    let last = rank - 1;
    let (last_n, last_stride) = (out_shape[last], strides[last]);
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    while out.len() < total {
        let mut p = base;
        for _ in 0..last_n {
            out.push(x[p]);
            p += last_stride;
        }
        let mut ax = last;
        loop {
            if ax == 0 {
                break;
            }
            ax -= 1;
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}
