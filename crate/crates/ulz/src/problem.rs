//! Problem instances and per-iteration solver traces.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector, SupportSet};
use crate::metrics::{eval_objective, nmse_db, support_metrics};

/// A single sparse-recovery instance: dictionary, measurements, ground truth.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub a: DenseMatrix,
    pub b: DenseVector,
    pub x_star: DenseVector,
    pub support: SupportSet,
    /// Measurement SNR in dB; `None` means noiseless, b = A x*.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl ProblemInstance {
    pub fn new(
        a: DenseMatrix,
        b: DenseVector,
        x_star: DenseVector,
        snr_db: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        if a.rows > a.cols {
            return Err(Error::Arg(format!(
                "problem requires M <= N, got {}x{}",
                a.rows, a.cols
            )));
        }
        if b.len() != a.rows || x_star.len() != a.cols {
            return Err(Error::Dim("problem: A, b, x* shapes disagree".into()));
        }
        let support = SupportSet::from_vector(&x_star);
        Ok(Self { a, b, x_star, support, snr_db, seed })
    }

    pub fn m(&self) -> usize {
        self.a.rows
    }

    pub fn n(&self) -> usize {
        self.a.cols
    }
}

/// Record of one solver run; every list has K+1 entries with index 0
/// holding the all-zero initialization.
#[derive(Debug, Clone, Default)]
pub struct SolverTrace {
    pub iterates: Vec<DenseVector>,
    pub objective: Vec<f64>,
    pub nmse_db: Vec<f64>,
    pub support_true_frac: Vec<f64>,
    pub support_false_frac: Vec<f64>,
    /// Per-iteration named diagnostics (eta, alpha, theta1, bound, ...).
    /// Entry k corresponds to the update that produced iterate k+1.
    pub diagnostics: Vec<BTreeMap<String, f64>>,
}

impl SolverTrace {
    pub fn with_capacity(k: usize) -> Self {
        Self {
            iterates: Vec::with_capacity(k + 1),
            objective: Vec::with_capacity(k + 1),
            nmse_db: Vec::with_capacity(k + 1),
            support_true_frac: Vec::with_capacity(k + 1),
            support_false_frac: Vec::with_capacity(k + 1),
            diagnostics: Vec::with_capacity(k),
        }
    }

    /// Append an iterate, computing objective and recovery metrics.
    pub fn push(
        &mut self,
        problem: &ProblemInstance,
        lambda: f64,
        x: DenseVector,
    ) -> Result<()> {
        let f = eval_objective(&problem.a, &problem.b, &x, lambda)?;
        if !f.is_finite() {
            return Err(Error::Numeric(format!(
                "objective became non-finite at iteration {}",
                self.iterates.len()
            )));
        }
        let nmse = nmse_db(&x, &problem.x_star)?;
        let (tf, ff, _) = support_metrics(&x, &problem.support);
        self.iterates.push(x);
        self.objective.push(f);
        self.nmse_db.push(nmse);
        self.support_true_frac.push(tf);
        self.support_false_frac.push(ff);
        Ok(())
    }

    pub fn push_diagnostics(&mut self, map: BTreeMap<String, f64>) {
        self.diagnostics.push(map);
    }

    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    pub fn last(&self) -> Option<&DenseVector> {
        self.iterates.last()
    }

    /// Diagnostic value for the update producing iterate `n` (n >= 1).
    pub fn diag(&self, n: usize, key: &str) -> Option<f64> {
        self.diagnostics.get(n - 1).and_then(|m| m.get(key)).copied()
    }
}
