//! Objective evaluation and the recovery metrics reported by every solver.

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector, SupportSet};

/// Lasso objective 0.5 ||Ax - b||^2 + lambda ||x||_1.
pub fn eval_objective(
    a: &DenseMatrix,
    b: &DenseVector,
    x: &DenseVector,
    lambda: f64,
) -> Result<f64> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Arg(format!("eval_objective: lambda = {lambda}")));
    }
    if b.len() != a.rows || x.len() != a.cols {
        return Err(Error::Dim(format!(
            "eval_objective: A is {}x{}, b has {}, x has {}",
            a.rows,
            a.cols,
            b.len(),
            x.len()
        )));
    }
    let r = a.matvec(x)?.sub(b);
    Ok(0.5 * r.norm2_sq() + lambda * x.norm1())
}

/// Normalized mean squared error in dB. Exact recovery yields the
/// negative-infinity sentinel, which the CSV layer writes as "-inf".
pub fn nmse_db(x: &DenseVector, x_star: &DenseVector) -> Result<f64> {
    if x.len() != x_star.len() {
        return Err(Error::Dim(format!(
            "nmse_db: lengths {} vs {}",
            x.len(),
            x_star.len()
        )));
    }
    let denom = x_star.norm2_sq();
    if denom == 0.0 {
        return Err(Error::Arg("nmse_db: reference signal is zero".into()));
    }
    let num = x.sub(x_star).norm2_sq();
    if num == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (num / denom).log10())
}

/// Energy fractions of `x` on the support and off it. Both are zero (with
/// the returned flag false) when `x` itself is zero.
pub fn support_metrics(x: &DenseVector, support: &SupportSet) -> (f64, f64, bool) {
    let total = x.norm2_sq();
    if total == 0.0 {
        return (0.0, 0.0, false);
    }
    let mut on = 0.0;
    for &i in support.indices() {
        if i < x.len() {
            on += x.data[i] * x.data[i];
        }
    }
    let true_frac = on / total;
    (true_frac, 1.0 - true_frac, true)
}
