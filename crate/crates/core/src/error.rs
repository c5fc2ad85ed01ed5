//! Error type shared across the library.

use thiserror::Error;

/// Errors surfaced by model construction, solvers, and the outer loop.
#[derive(Debug, Error)]
pub enum AirError {
    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter `{name}` = {value}: must satisfy {constraint}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    /// A smoothing value is incompatible with the chosen penalty.
    #[error("epsilon = {eps} is not admissible for {kind}: {reason}")]
    EpsilonDomain {
        kind: &'static str,
        eps: f64,
        reason: &'static str,
    },

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// Group structure does not partition the variables.
    #[error("invalid group structure: {reason}")]
    InvalidGroups { reason: String },

    /// A linear system could not be factored or solved.
    #[error("singular or rank-deficient system in {context}")]
    SingularSystem { context: &'static str },

    /// The constraint set admits no point compatible with the data.
    #[error("infeasible constraint: residual {violation:.3e} exceeds tolerance {tolerance:.3e}")]
    Infeasible { violation: f64, tolerance: f64 },

    /// A point violates the feasibility tolerance of an operation that requires it.
    #[error("point is infeasible in {context}: violation {violation:.3e}")]
    InfeasiblePoint {
        context: &'static str,
        violation: f64,
    },

    /// The monitored objective increased between outer iterations.
    #[error(
        "descent violated at outer iteration {iteration}: J went from {previous:.12e} to {current:.12e}"
    )]
    DescentViolation {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    /// A quadratic loss matrix is not positive semidefinite.
    #[error("matrix in {context} is not positive semidefinite (eigenvalue {eigenvalue:.3e})")]
    NotPsd {
        context: &'static str,
        eigenvalue: f64,
    },

    /// File or stream handling failed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A data or configuration file could not be parsed.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A configuration document is invalid.
    #[error("configuration error: {message}")]
    Config { message: String },
}

impl AirError {
    /// Process exit code class for the CLI: 2 for i/o, 3 for validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            AirError::Io { .. } => 2,
            AirError::Parse { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, AirError>;
