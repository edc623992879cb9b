use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-5;

/// Compares the reverse-mode gradient of a scalar function against central
/// differences, coordinate by coordinate, in `f64`.
///
/// Returns `max_i |a_i − n_i| / max(|a_i|, |n_i|, 1e-5·max(1, |f(x)|))`. The
/// floor sits above the round-off noise of a central difference (forward-pass
/// rounding of `f`, amplified by `1/(2·eps)`, measured around `1e-10·|f|`), so
/// gradients that small — typically exact zeros — are compared absolutely.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_coords(f, x, eps, &all)
}

/// [`grad_check`] restricted to the listed coordinates of `x`.
pub fn grad_check_coords<F>(f: F, x: &Tensor<f64>, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let loss = f(&mut g, xv)?;
    g.backward(loss)?;
    let analytic = g.grad_tensor(xv);

    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.leaf(probe, false);
        let loss = f(&mut g, xv)?;
        let value = g.value(loss);
        if value.len() != 1 {
            return Err(Error::Graph(format!("grad_check needs a scalar function, got {:?}", value.shape())));
        }
        Ok(value.data()[0])
    };

    let floor = REL_FLOOR * eval(x.clone())?.abs().max(1.0);
    let mut worst = 0.0f64;
    for &i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if !err.is_finite() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}
