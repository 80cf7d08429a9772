//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Dimension or shape mismatch between operands.
    Dim(String),
    /// Invalid argument value (out-of-range scalar, bad flag, ...).
    Arg(String),
    /// Numerical failure (singular factorization, non-convergence).
    Numeric(String),
    /// A solver constraint was violated by supplied parameters; the
    /// message names the bound.
    Constraint(String),
    /// A certified-run precondition does not hold for this instance;
    /// the message states the violated inequality.
    Infeasible(String),
    /// Training failure (divergence, non-finite gradient).
    Training(String),
    /// An input that must carry data is empty.
    Empty(String),
    Io(std::io::Error),
    Parse(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim(m) => write!(f, "dimension mismatch: {m}"),
            Error::Arg(m) => write!(f, "invalid argument: {m}"),
            Error::Numeric(m) => write!(f, "numerical error: {m}"),
            Error::Constraint(m) => write!(f, "constraint violation: {m}"),
            Error::Infeasible(m) => write!(f, "infeasible: {m}"),
            Error::Training(m) => write!(f, "training error: {m}"),
            Error::Empty(m) => write!(f, "empty input: {m}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Parse(m) => write!(f, "parse error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
