//! Central-difference gradients, the independent oracle for backward passes.

use super::Tensor;
use crate::error::{Error, Result};

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
///
/// `f` must map a tensor of `at`'s shape to a scalar tensor and be
/// deterministic; its output enters no graph here, only its value is read.
/// A non-finite objective surfaces as an error naming the perturbed
/// coordinate.
pub fn finite_diff_gradient<F>(f: F, at: &Tensor, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if h <= 0.0 {
        return Err(Error::InvalidArgument {
            what: "finite difference step",
            why: format!("h must be positive, got {h}"),
        });
    }
    let base = at.values().to_vec();
    let shape = at.shape().to_vec();
    let mut grad = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = eval_scalar(&f, &shape, plus, i)?;
        let fm = eval_scalar(&f, &shape, minus, i)?;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

fn eval_scalar<F>(f: &F, shape: &[usize], values: Vec<f64>, coordinate: usize) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let t = Tensor::new(shape, values)?;
    let out = match f(&t) {
        Ok(out) => out,
        Err(Error::NonFinite { .. }) => {
            return Err(Error::NonFiniteObjective { coordinate });
        }
        Err(e) => return Err(e),
    };
    if out.numel() != 1 {
        return Err(Error::NonScalarRoot {
            shape: out.shape().to_vec(),
        });
    }
    Ok(out.scalar_value())
}
