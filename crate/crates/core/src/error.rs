use thiserror::Error;

/// Coarse failure class, used by callers to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numerical,
    Io,
}

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("eigensolver did not converge within {max_sweeps} sweeps")]
    NoConvergence { max_sweeps: usize },

    #[error("matrix exponential scale {scale:.3e} exceeds the supported scaling depth")]
    ScalingDepthExceeded { scale: f64 },

    #[error("finite-difference step {step:.3e} leaves the coupling domain at parameter {index}")]
    StepOutsideDomain { index: usize, step: f64 },

    #[error("information matrix is singular: condition number {condition:.3e} exceeds cap {cap:.3e}")]
    SingularInformation { condition: f64, cap: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("dataset needs about {required} bytes, memory budget is {budget}")]
    MemoryBudget { required: u64, budget: u64 },

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidChain(_)
            | Error::InvalidState(_)
            | Error::InvalidConfig(_)
            | Error::ShapeMismatch(_)
            | Error::MemoryBudget { .. }
            | Error::EmptySelection(_) => ErrorCategory::Config,
            Error::NoConvergence { .. }
            | Error::ScalingDepthExceeded { .. }
            | Error::StepOutsideDomain { .. }
            | Error::SingularInformation { .. }
            | Error::NonFiniteLoss { .. } => ErrorCategory::Numerical,
            Error::CorruptFile { .. } | Error::Io(_) => ErrorCategory::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
