//! Sparse-recovery solver suite for the Lasso problem.
//!
//! Provides classical baselines (ISTA, FISTA, ADMM), seven hybrid unrolled
//! solvers that interleave free-form neural operators with proximal steps,
//! a minimal reverse-mode autodiff tape for training the unrolled models,
//! synthetic problem generation, and certified runs that check the
//! per-iteration recovery-error bounds of the hybrid family.

pub mod autodiff;
pub mod bundle;
pub mod classical;
pub mod cli;
pub mod dictgen;
pub mod error;
pub mod hybrid;
pub mod linalg;
pub mod metrics;
pub mod neuralop;
pub mod problem;
pub mod rng;
pub mod thresh;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector, SupportSet};
pub use problem::{ProblemInstance, SolverTrace};
