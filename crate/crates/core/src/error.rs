use alloc::string::String;

/// Errors raised by model construction, assembly and fitting.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("invalid data for subject {subject}: {reason}")]
    InvalidData { subject: u64, reason: String },
    #[error("random-effect correlation parameters do not define a positive definite matrix")]
    NotPositiveDefinite,
    #[error("matrix is not positive definite (pivot {0})")]
    CholeskyFailed(usize),
    #[error("argument outside of its domain: {0}")]
    Domain(String),
    #[error("index {index} out of range for latent field of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("inner Newton iteration did not converge after {0} iterations")]
    InnerNotConverged(usize),
    #[error("hyperparameter mode search did not converge (gradient max-norm {0:.3e})")]
    ModeSearchFailed(f64),
    #[error("conditioning event has probability {0:.3e}, below the sampling limit")]
    ExtremeThreshold(f64),
}

pub type Result<T> = core::result::Result<T, Error>;
