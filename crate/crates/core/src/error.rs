use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the kernels and solvers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Vector or matrix dimensions do not agree.
    DimensionMismatch { expected: usize, found: usize },
    /// An argument violates an operation's precondition.
    InvalidArgument(String),
    /// The matrix handed to the factorization is not positive definite.
    NotPositiveDefinite { pivot: usize, value: f64 },
    /// The dense baseline path refuses systems above its capacity.
    CapacityExceeded { dim: usize, limit: usize },
    /// A matrix is structurally unusable (zero row, asymmetric, ...).
    InvalidMatrix(String),
    /// The system state contains non-finite coordinates or velocities.
    InvalidState(String),
    /// A distance constraint has coincident endpoints.
    DegenerateConstraint { index: usize },
    /// The step matrix does not respect the per-node tie groups.
    TieViolation { contact: usize },
    /// The fixed-point iterate became non-finite. Carries the residual trace.
    Divergence { iteration: usize, trace: Vec<f64> },
    /// An inner numeric routine failed to converge.
    Numeric(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NotPositiveDefinite { pivot, value } => {
                write!(f, "matrix is not positive definite (pivot {pivot} = {value:e})")
            }
            Error::CapacityExceeded { dim, limit } => {
                write!(f, "dimension {dim} exceeds dense capacity {limit}")
            }
            Error::InvalidMatrix(msg) => write!(f, "invalid matrix: {msg}"),
            Error::InvalidState(msg) => write!(f, "invalid state: {msg}"),
            Error::DegenerateConstraint { index } => {
                write!(f, "constraint {index} is degenerate (coincident endpoints)")
            }
            Error::TieViolation { contact } => {
                write!(f, "step matrix violates the tie group of contact {contact}")
            }
            Error::Divergence { iteration, .. } => {
                write!(f, "fixed-point iteration diverged at iteration {iteration}")
            }
            Error::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
