//! Central finite-difference checks against the analytic backward pass.

use super::backward::backward;
use super::tensor::{no_grad, Tensor};
use crate::error::{Error, Result};

/// `|analytic − numeric| / max(1e-8, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error over all coordinates of all inputs.
    pub max_rel_error: f64,
    /// Worst relative error per input, in input order.
    pub per_input: Vec<f64>,
    /// (input, coordinate) of the worst coordinate.
    pub worst: (usize, usize),
}

/// Checks the gradient of a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    grad_check_inputs(|xs| f(&xs[0]), std::slice::from_ref(x), eps).map(|r| r.max_rel_error)
}

/// Checks the gradient of a scalar function with respect to each input.
pub fn grad_check_inputs<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if eps <= 0.0 || eps.is_nan() {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
    let grads = backward(&f(&leaves)?)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_input: vec![0.0; leaves.len()],
        worst: (0, 0),
    };
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(leaf);
        for k in 0..leaf.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut shifted = leaves.clone();
                let mut v = leaf.to_vec();
                v[k] += delta;
                shifted[i] = Tensor::new(v, leaf.shape())?;
                no_grad(|| f(&shifted))?.item()
            };
            let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            let err = relative_error(analytic.values()[k], numeric);
            if err > report.per_input[i] {
                report.per_input[i] = err;
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, k);
            }
        }
    }
    Ok(report)
}
