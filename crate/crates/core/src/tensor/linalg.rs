use super::Tensor;
use crate::error::{shape_err, Result};

/// `c = a·b + beta·c` for row-major buffers, with optional logical transposes.
/// `a` is logically `m×k`, `b` is `k×n`; a transposed operand is stored the
/// other way round.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the stated layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product of `[m, k]` and `[k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return shape_err("matmul", a.shape(), b.shape());
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        "matmul",
        vec![m, n],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let ga = ac.requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, false, bc.data(), true, 0.0, &mut ga);
                ga
            });
            let gb = bc.requires_grad().then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, ac.data(), true, g, false, 0.0, &mut gb);
                gb
            });
            vec![ga, gb]
        }),
    ))
}

/// Batched product of `[B, m, k]` and `[B, k, n]`, optionally transposing the
/// trailing two axes of either operand first (so `b_t` takes `[B, n, k]`).
pub fn bmm(a: &Tensor, b: &Tensor, a_t: bool, b_t: bool) -> Result<Tensor> {
    if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] {
        return shape_err("bmm", a.shape(), b.shape());
    }
    let batch = a.shape()[0];
    let (m, k) = if a_t {
        (a.shape()[2], a.shape()[1])
    } else {
        (a.shape()[1], a.shape()[2])
    };
    let (kb, n) = if b_t {
        (b.shape()[2], b.shape()[1])
    } else {
        (b.shape()[1], b.shape()[2])
    };
    if k != kb {
        return shape_err("bmm", a.shape(), b.shape());
    }
    let mut out = vec![0.0; batch * m * n];
    for i in 0..batch {
        gemm(
            m,
            k,
            n,
            &a.data()[i * m * k..],
            a_t,
            &b.data()[i * k * n..],
            b_t,
            0.0,
            &mut out[i * m * n..],
        );
    }
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        "bmm",
        vec![batch, m, n],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let ga = ac.requires_grad().then(|| {
                let mut ga = vec![0.0; batch * m * k];
                for i in 0..batch {
                    let gi = &g[i * m * n..];
                    let bi = &bc.data()[i * k * n..];
                    let dst = &mut ga[i * m * k..];
                    if a_t {
                        // dA (stored k×m) = B · dCᵀ
                        gemm(k, n, m, bi, b_t, gi, true, 0.0, dst);
                    } else {
                        // dA (m×k) = dC · Bᵀ
                        gemm(m, n, k, gi, false, bi, !b_t, 0.0, dst);
                    }
                }
                ga
            });
            let gb = bc.requires_grad().then(|| {
                let mut gb = vec![0.0; batch * k * n];
                for i in 0..batch {
                    let gi = &g[i * m * n..];
                    let ai = &ac.data()[i * m * k..];
                    let dst = &mut gb[i * k * n..];
                    if b_t {
                        // dB (stored n×k) = dCᵀ · A
                        gemm(n, m, k, gi, true, ai, a_t, 0.0, dst);
                    } else {
                        // dB (k×n) = Aᵀ · dC
                        gemm(k, m, n, ai, !a_t, gi, false, 0.0, dst);
                    }
                }
                gb
            });
            vec![ga, gb]
        }),
    ))
}

/// Applies `[k, n]` weights to the last axis of `x`, then adds an optional bias.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let k = *x.shape().last().expect("rank >= 1");
    if weight.rank() != 2 || weight.shape()[0] != k {
        return shape_err("linear", x.shape(), weight.shape());
    }
    let rows = x.numel() / k;
    let y = matmul(&x.reshape(&[rows, k])?, weight)?;
    let y = match bias {
        Some(b) => y.add_trailing(b)?,
        None => y,
    };
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = weight.shape()[1];
    y.reshape(&shape)
}
