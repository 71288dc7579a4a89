use thiserror::Error;

use crate::eigensolver::SpectrumResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operator does not commute with the column symmetries: {0}")]
    SymmetryMismatch(String),

    #[error("symmetry algebra violated: {check} has residual {residual:.3e}")]
    AlgebraViolation { check: String, residual: f64 },

    #[error("dimension {dim} exceeds dense limit {max}")]
    DimensionExceeded { dim: usize, max: usize },

    #[error("not converged after {iterations} iterations (best residual {best_residual:.3e})")]
    NotConverged { iterations: usize, best_residual: f64 },

    #[error("expected a two-fold ground space, found degeneracy {degeneracy}")]
    UnexpectedDegeneracy {
        degeneracy: usize,
        spectrum: Box<SpectrumResult>,
    },

    #[error("unstable configuration: {0}")]
    UnstableConfiguration(String),

    #[error("integration failure at t = {time:.6e}: {reason}")]
    IntegrationFailure { time: f64, reason: String },

    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical method (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotConverged { .. }
            | Error::IntegrationFailure { .. }
            | Error::UnstableConfiguration(_)
            | Error::AlgebraViolation { .. } => true,
            Error::Trial { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Stable machine-readable name, used in JSON error objects and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidLattice(_) => "InvalidLattice",
            Error::InvalidOperator(_) => "InvalidOperator",
            Error::BasisMismatch(_) => "BasisMismatch",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::SymmetryMismatch(_) => "SymmetryMismatch",
            Error::AlgebraViolation { .. } => "AlgebraViolation",
            Error::DimensionExceeded { .. } => "DimensionExceeded",
            Error::NotConverged { .. } => "NotConverged",
            Error::UnexpectedDegeneracy { .. } => "UnexpectedDegeneracy",
            Error::UnstableConfiguration(_) => "UnstableConfiguration",
            Error::IntegrationFailure { .. } => "IntegrationFailure",
            Error::Trial { source, .. } => source.kind(),
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
        }
    }
}
