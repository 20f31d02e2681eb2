//! Central finite-difference verification of gradient rules.
//!
//! Checks run in f64 (finite differences are unreliable in f32). Each
//! perturbed evaluation rebuilds a fresh tape, so the sweep over elements is
//! embarrassingly parallel.

use crate::error::{Result, TensorError};
use crate::parallel::map_indexed;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error between an analytic and a numeric derivative:
/// `|a - n| / max(1, |a|, |n|)`.
fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0f64.max(analytic.abs()).max(numeric.abs())
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if !value.is_scalar() {
        return Err(TensorError::InvalidArgument {
            op: "grad_check",
            reason: format!("computation must be scalar-valued, got {:?}", value.shape()),
        });
    }
    let v = value.scalar_value();
    if !v.is_finite() {
        return Err(TensorError::NonFinite { op: "grad_check" });
    }
    Ok(v)
}

/// Central finite differences against caller-supplied analytic gradients
/// (one per input, aligned by position). Returns the max relative error.
pub fn grad_check_against<F>(
    f: &F,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    eps: f64,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync,
{
    assert_eq!(inputs.len(), analytic.len(), "one analytic gradient per input");
    if eps <= 0.0 {
        return Err(TensorError::InvalidArgument {
            op: "grad_check",
            reason: "eps must be positive".into(),
        });
    }
    let mut worst = 0.0f64;
    for (which, grad) in analytic.iter().enumerate() {
        let errors = map_indexed(inputs[which].numel(), |i| -> Result<f64> {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[i] += eps;
            let f_plus = eval_scalar(f, &plus)?;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[i] -= eps;
            let f_minus = eval_scalar(f, &minus)?;
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(TensorError::NonFinite { op: "grad_check" });
            }
            Ok(relative_error(grad.data()[i], numeric))
        });
        for e in errors {
            worst = worst.max(e?);
        }
    }
    Ok(worst)
}

/// Checks the tape's analytic gradients of a scalar computation over every
/// element of every input. Returns the max relative error.
pub fn grad_check_multi<F>(f: &F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(TensorError::InvalidArgument {
            op: "grad_check",
            reason: format!(
                "computation must be scalar-valued, got {:?}",
                tape.shape(out)
            ),
        });
    }
    if !tape.value(out).scalar_value().is_finite() {
        return Err(TensorError::NonFinite { op: "grad_check" });
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, input)| {
            grads
                .wrt(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(input.shape()))
        })
        .collect();
    for g in &analytic {
        if !g.all_finite() {
            return Err(TensorError::NonFinite { op: "grad_check" });
        }
    }
    grad_check_against(f, inputs, &analytic, eps)
}

/// Single-input convenience wrapper around [`grad_check_multi`].
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var> + Sync,
{
    grad_check_multi(&|tape: &mut Tape<f64>, vars: &[Var]| f(tape, vars[0]), &[x.clone()], eps)
}
