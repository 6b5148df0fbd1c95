//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates forward values on untracked copies of the
//! inputs, so it stays independent of the backward closures under test.

use super::Tensor;
use crate::error::Result;

/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`.
pub const REL_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// (input index, element index, analytic, numeric) of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Fixed pseudo-random projection weights in [-1, 1] so that every output
/// element contributes to the probed scalar.
fn projection(n: usize) -> Vec<f64> {
    let mut s: u64 = 0x9E37_79B9_7F4A_7C15 ^ n as u64;
    (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

fn project(out: &Tensor, w: &[f64]) -> f64 {
    out.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Compares backward-pass gradients of `⟨f(inputs), w⟩` with central
/// differences at step `h`. Only inputs that track gradients are perturbed.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let out = f(inputs)?;
    let w = projection(out.numel());
    let loss = out.mul(&Tensor::new(out.shape(), w.clone())?)?.sum();
    for t in inputs {
        t.zero_grad();
    }
    loss.backward()?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for (which, input) in inputs.iter().enumerate() {
        if !input.requires_grad() {
            continue;
        }
        let analytic = input.grad().unwrap_or_else(|| vec![0.0; input.numel()]);
        for i in 0..input.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let probe: Vec<Tensor> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        if j == which {
                            let mut v = t.to_vec();
                            v[i] += delta;
                            Tensor::new(t.shape(), v)
                        } else {
                            Ok(t.detach())
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(project(&f(&probe)?, &w))
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let e = rel_err(analytic[i], numeric);
            report.checked += 1;
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst = Some((which, i, analytic[i], numeric));
            }
        }
    }
    Ok(report)
}
