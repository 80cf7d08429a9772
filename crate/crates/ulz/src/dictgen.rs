//! Synthetic problem generation: Gaussian dictionaries with unit-norm
//! columns, Bernoulli-Gaussian signals, exact-energy noise, and the
//! coupled-weight matrix that the coherence-based theory runs on.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, svd_wide, DenseMatrix, DenseVector, SupportSet};
use crate::problem::ProblemInstance;
use crate::rng::{stream, SplitMix64};

/// Recipe for one synthetic instance family.
#[derive(Debug, Clone)]
pub struct GenSpec {
    pub m: usize,
    pub n: usize,
    /// Bernoulli probability of a nonzero signal entry.
    pub bernoulli_p: f64,
    /// Target condition number of the dictionary; `None` leaves the raw
    /// Gaussian spectrum untouched.
    pub condition_number: Option<f64>,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m > self.n {
            return Err(Error::Arg(format!(
                "generator requires M <= N, got {}x{}",
                self.m, self.n
            )));
        }
        if !(self.bernoulli_p > 0.0 && self.bernoulli_p <= 1.0) {
            return Err(Error::Arg(format!(
                "bernoulli_p must lie in (0, 1], got {}",
                self.bernoulli_p
            )));
        }
        if let Some(k) = self.condition_number {
            if !(k >= 1.0) {
                return Err(Error::Arg(format!("condition number {k} < 1")));
            }
        }
        Ok(())
    }
}

/// Coupled weight matrix and the coherence it achieves.
#[derive(Debug, Clone)]
pub struct CoherenceReport {
    pub w: DenseMatrix,
    /// max_{i != j} |W_i' A_j| for the returned W; an upper bound on the
    /// generalized mutual coherence of A.
    pub mu_hat: f64,
    /// max_i |W_i' A_i - 1|, the diagonal constraint residual.
    pub diag_max_dev: f64,
}

fn normalize_columns(a: &mut DenseMatrix) {
    for j in 0..a.cols {
        let mut s = 0.0;
        for i in 0..a.rows {
            let v = a.get(i, j);
            s += v * v;
        }
        let norm = s.sqrt();
        if norm > 0.0 {
            for i in 0..a.rows {
                a.set(i, j, a.get(i, j) / norm);
            }
        }
    }
}

/// Entries N(0, 1/M) from the DICT stream of `spec.seed`, columns scaled to
/// unit l2 norm. With a condition number set, the singular values of the
/// raw draw are rewritten to a geometric sequence before re-normalizing;
/// the column scaling perturbs the achieved value slightly, so callers that
/// need it should measure the final matrix with [`achieved_condition_number`].
pub fn generate_dictionary(spec: &GenSpec) -> Result<DenseMatrix> {
    spec.validate()?;
    let mut g = SplitMix64::stream(spec.seed, stream::DICT);
    let scale = 1.0 / (spec.m as f64).sqrt();
    let mut a = DenseMatrix {
        rows: spec.m,
        cols: spec.n,
        data: (0..spec.m * spec.n)
            .map(|_| scale * g.next_gaussian())
            .collect(),
    };
    if let Some(kappa) = spec.condition_number {
        a = rewrite_spectrum(&a, kappa)?;
    }
    normalize_columns(&mut a);
    Ok(a)
}

/// Replace the singular values of `a` with the geometric sequence
/// sigma_i = kappa^(-i/(m-1)), i = 0..m-1, so the extreme ratio is exactly
/// `kappa` before column normalization.
pub fn rewrite_spectrum(a: &DenseMatrix, kappa: f64) -> Result<DenseMatrix> {
    let m = a.rows;
    let (u, _, vt) = svd_wide(a)?;
    let mut out = DenseMatrix::zeros(a.rows, a.cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let mut acc = 0.0;
            for k in 0..m {
                let sigma = if m == 1 {
                    1.0
                } else {
                    kappa.powf(-(k as f64) / (m as f64 - 1.0))
                };
                acc += u.get(i, k) * sigma * vt.get(k, j);
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// Ratio of extreme singular values of `a`.
pub fn achieved_condition_number(a: &DenseMatrix) -> Result<f64> {
    let (_, sigma, _) = svd_wide(a)?;
    let max = sigma[0];
    let min = sigma[a.rows - 1];
    if min <= 0.0 {
        return Err(Error::Numeric("singular dictionary".into()));
    }
    Ok(max / min)
}

/// Bernoulli(p) . N(0,1) signal from the SIGNAL stream. The whole vector is
/// re-drawn until at least two entries are nonzero, since the recovery
/// theory assumes |S| >= 2; the bundle metadata records this policy.
pub fn sample_signal(n: usize, p: f64, seed: u64) -> Result<(DenseVector, SupportSet)> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Arg(format!("signal probability {p} outside (0, 1]")));
    }
    let mut g = SplitMix64::stream(seed, stream::SIGNAL);
    loop {
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let keep = g.next_f64() < p;
                let z = g.next_gaussian();
                if keep {
                    z
                } else {
                    0.0
                }
            })
            .collect();
        let x = DenseVector::new(x);
        let support = SupportSet::from_vector(&x);
        if support.len() >= 2 {
            return Ok((x, support));
        }
    }
}

/// Add Gaussian noise rescaled so that 10 log10(||b||^2/||n||^2) equals
/// `snr_db` exactly. An infinite SNR returns `b` unchanged.
pub fn add_noise(b: &DenseVector, snr_db: f64, seed: u64) -> Result<DenseVector> {
    if b.norm2_sq() == 0.0 {
        return Err(Error::Arg("add_noise: zero measurement vector".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(b.clone());
    }
    let mut g = SplitMix64::stream(seed, stream::NOISE);
    let mut n = DenseVector::new((0..b.len()).map(|_| g.next_gaussian()).collect());
    let target_energy = b.norm2_sq() * 10f64.powf(-snr_db / 10.0);
    let cur = n.norm2_sq();
    if cur == 0.0 {
        return Err(Error::Numeric("degenerate zero noise draw".into()));
    }
    let s = (target_energy / cur).sqrt();
    n = n.scale(s);
    Ok(b.add(&n))
}

/// Build a full problem instance from a spec: dictionary, signal,
/// measurements, optional noise. Draws come from independent streams so
/// e.g. adding noise never changes the dictionary.
pub fn generate_problem(spec: &GenSpec) -> Result<ProblemInstance> {
    let a = generate_dictionary(spec)?;
    let (x_star, _) = sample_signal(spec.n, spec.bernoulli_p, spec.seed)?;
    let clean = a.matvec(&x_star)?;
    let b = match spec.snr_db {
        Some(snr) => add_noise(&clean, snr, spec.seed)?,
        None => clean,
    };
    ProblemInstance::new(a, b, x_star, spec.snr_db, spec.seed)
}

/// Closed-form minimizer of ||W' A||_F^2 subject to W_i' A_i = 1:
/// W_i = (A A')^{-1} A_i / (A_i' (A A')^{-1} A_i).
pub fn analytic_w(a: &DenseMatrix) -> Result<CoherenceReport> {
    let gram = a.gram_rows();
    let l = cholesky(&gram).map_err(|e| match e {
        Error::Numeric(m) => Error::Numeric(format!("A A' is singular: {m}")),
        other => other,
    })?;
    let mut w = DenseMatrix::zeros(a.rows, a.cols);
    for j in 0..a.cols {
        let aj = DenseVector::new(a.col(j));
        let y = cholesky_solve(&l, &aj);
        let denom = aj.dot(&y);
        if denom.abs() < 1e-300 {
            return Err(Error::Numeric(format!(
                "analytic_w: column {j} orthogonal to row space"
            )));
        }
        for i in 0..a.rows {
            w.set(i, j, y.data[i] / denom);
        }
    }
    let mu_hat = coherence(a, &w)?;
    let mut diag_max_dev = 0.0f64;
    for j in 0..a.cols {
        let mut d = 0.0;
        for i in 0..a.rows {
            d += w.get(i, j) * a.get(i, j);
        }
        diag_max_dev = diag_max_dev.max((d - 1.0).abs());
    }
    Ok(CoherenceReport { w, mu_hat, diag_max_dev })
}

/// max_{i != j} |W_i' A_j| — the coherence achieved by this particular W.
pub fn coherence(a: &DenseMatrix, w: &DenseMatrix) -> Result<f64> {
    if a.rows != w.rows || a.cols != w.cols {
        return Err(Error::Dim(format!(
            "coherence: A is {}x{}, W is {}x{}",
            a.rows, a.cols, w.rows, w.cols
        )));
    }
    let mut mu = 0.0f64;
    for i in 0..a.cols {
        let wi = w.col(i);
        for j in 0..a.cols {
            if i == j {
                continue;
            }
            let mut acc = 0.0;
            for r in 0..a.rows {
                acc += wi[r] * a.get(r, j);
            }
            mu = mu.max(acc.abs());
        }
    }
    Ok(mu)
}
