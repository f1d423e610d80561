//! Central finite-difference gradient checking.
//!
//! The oracle only ever re-runs the supplied forward closure at perturbed
//! inputs, so it stays independent of the tape's backward implementation.

use super::{Element, Tensor};

/// Relative error with an absolute floor: |a - n| / max(|a|, |n|, 1e-4).
/// Entries below the floor are effectively compared absolutely at 1e-4
/// scale, which keeps central-difference probe noise (~1e-9 per evaluation)
/// from dominating legitimately tiny gradients while still catching formula
/// bugs, whose errors arrive at gradient magnitude.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs().max(n.abs())).max(1e-4)
}

/// Numeric gradient of a scalar function w.r.t. every input tensor, using
/// the symmetric difference (f(x+eps) - f(x-eps)) / (2 eps) per coordinate.
pub fn central_diff<F>(mut f: F, inputs: &[Tensor<f64>], eps: f64) -> Vec<Tensor<f64>>
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for which in 0..inputs.len() {
        let (rows, cols) = inputs[which].shape();
        let mut grad = Tensor::<f64>::zeros(rows, cols);
        for idx in 0..rows * cols {
            let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
            probe[which].data_mut()[idx] += eps;
            let up = f(&probe);
            probe[which].data_mut()[idx] -= 2.0 * eps;
            let down = f(&probe);
            grad.data_mut()[idx] = (up - down) / (2.0 * eps);
        }
        grads.push(grad);
    }
    grads
}

/// Worst relative error between analytic and numeric gradients. `None`
/// analytic entries are treated as all-zero tensors.
pub fn compare<T: Element>(
    analytic: &[Option<Tensor<T>>],
    numeric: &[Tensor<f64>],
) -> (f64, String) {
    let mut worst = 0.0f64;
    let mut where_ = String::from("(no coordinates)");
    for (i, num) in numeric.iter().enumerate() {
        for (idx, n) in num.data().iter().enumerate() {
            let a = analytic[i]
                .as_ref()
                .map_or(0.0, |t| t.data()[idx].to_f64());
            let e = rel_err(a, *n);
            if e > worst {
                worst = e;
                where_ = format!("input {i} flat index {idx}: analytic {a}, numeric {n}");
            }
        }
    }
    (worst, where_)
}

/// Run a full check: numeric gradients of `f` vs the provided analytic ones.
/// Returns the worst relative error, or a description of the worst
/// coordinate if it exceeds `tol`.
pub fn check<F>(
    f: F,
    inputs: &[Tensor<f64>],
    analytic: &[Option<Tensor<f64>>],
    eps: f64,
    tol: f64,
) -> Result<f64, String>
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    assert_eq!(inputs.len(), analytic.len());
    let numeric = central_diff(f, inputs, eps);
    let (worst, where_) = compare(analytic, &numeric);
    if worst < tol {
        Ok(worst)
    } else {
        Err(format!("rel err {worst:.3e} exceeds {tol:.1e} at {where_}"))
    }
}
