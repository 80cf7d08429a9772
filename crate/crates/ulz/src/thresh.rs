//! The three shrinkage operators used by the solvers: plain soft
//! thresholding, soft thresholding with support selection, and the
//! three-piece multistage operator.

use crate::error::{Error, Result};
use crate::linalg::DenseVector;

#[inline]
pub fn soft_scalar(z: f64, theta: f64) -> f64 {
    if z > theta {
        z - theta
    } else if z < -theta {
        z + theta
    } else {
        0.0
    }
}

/// Component-wise soft threshold sgn(z) max(0, |z| - theta).
pub fn soft_threshold(z: &DenseVector, theta: f64) -> Result<DenseVector> {
    if theta < 0.0 || !theta.is_finite() {
        return Err(Error::Arg(format!("soft_threshold: theta = {theta}")));
    }
    Ok(DenseVector::new(
        z.data.iter().map(|&v| soft_scalar(v, theta)).collect(),
    ))
}

/// Indices of the `keep_count` largest-magnitude entries of `z`.
/// Ties break toward the lower index, so the selection is deterministic.
pub fn top_k_indices(z: &DenseVector, keep_count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| {
        z.data[b]
            .abs()
            .partial_cmp(&z.data[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = order.into_iter().take(keep_count).collect();
    keep.sort_unstable();
    keep
}

/// Soft threshold with support selection: the `keep_count` entries of
/// largest magnitude bypass the shrinkage (they pass through when they
/// exceed the threshold, are zeroed otherwise), every other entry is
/// soft-thresholded.
pub fn ss_threshold(z: &DenseVector, theta: f64, keep_count: usize) -> Result<DenseVector> {
    if theta < 0.0 || !theta.is_finite() {
        return Err(Error::Arg(format!("ss_threshold: theta = {theta}")));
    }
    if keep_count > z.len() {
        return Err(Error::Arg(format!(
            "ss_threshold: keep_count {keep_count} exceeds length {}",
            z.len()
        )));
    }
    let keep = top_k_indices(z, keep_count);
    let mut out = vec![0.0; z.len()];
    let mut k = 0usize;
    for i in 0..z.len() {
        let member = k < keep.len() && keep[k] == i;
        if member {
            k += 1;
        }
        let v = z.data[i];
        out[i] = if v > theta {
            if member { v } else { v - theta }
        } else if v < -theta {
            if member { v } else { v + theta }
        } else {
            0.0
        };
    }
    Ok(DenseVector::new(out))
}

#[inline]
pub fn multistage_scalar(x: f64, theta: f64, theta_hat: f64) -> f64 {
    let a = x.abs();
    if a < theta {
        0.0
    } else if a < theta_hat {
        theta_hat / (theta_hat - theta) * x.signum() * (a - theta)
    } else {
        x
    }
}

/// Three-piece shrinkage: zero below `theta`, linear ramp on
/// [theta, theta_hat), identity from `theta_hat` on.
pub fn multistage_threshold(
    z: &DenseVector,
    theta: f64,
    theta_hat: f64,
) -> Result<DenseVector> {
    if theta < 0.0 || !theta.is_finite() {
        return Err(Error::Arg(format!("multistage_threshold: theta = {theta}")));
    }
    if !(theta_hat > theta) {
        return Err(Error::Arg(format!(
            "multistage_threshold: theta_hat {theta_hat} must exceed theta {theta}"
        )));
    }
    Ok(DenseVector::new(
        z.data
            .iter()
            .map(|&v| multistage_scalar(v, theta, theta_hat))
            .collect(),
    ))
}
