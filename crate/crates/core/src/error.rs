use thiserror::Error;

/// Errors raised by the solver, its diagnostics and the dense oracle.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed input: dimension mismatch, empty cloud, out-of-range parameter.
    #[error("invalid input: {0}")]
    Input(String),

    /// A dense computation was requested above the configured size cap.
    #[error("dense computation of size {requested} exceeds the cap of {cap}")]
    Capacity { requested: usize, cap: usize },

    /// Cholesky of the landmark kernel failed even at the largest jitter.
    #[error("landmark kernel is not positive definite even with jitter {max_jitter:e}")]
    DegenerateLandmarks { max_jitter: f64 },

    /// Adaptive Nyström hit the rank ceiling before meeting its tolerance.
    #[error("Nyström rank exhausted at r = {rank}: error certificate {err:e} > tolerance {tau:e}")]
    RankExhausted { rank: usize, err: f64, tau: f64 },

    /// A Sinkhorn renormalization produced a nonpositive or non-finite denominator.
    #[error("operator produced a nonpositive or non-finite value at index {index} (iteration {iteration})")]
    NonpositiveOperator { iteration: usize, index: usize },

    /// Sinkhorn scaling did not reach its tolerance.
    #[error("Sinkhorn did not converge in {iterations} iterations (marginal violation {violation:e})")]
    NoConvergence { iterations: usize, violation: f64 },

    /// The pipeline kept hitting nonpositive operators and had no dense fallback.
    #[error("gave up after {retries} retries: {last}")]
    RetryExhausted { retries: usize, last: Box<Error> },

    /// The rounding step received an operator inconsistent with its contract.
    #[error("invalid operator for rounding: {0}")]
    InvalidOperator(String),

    /// Matrix expected to be symmetric is not.
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    /// The dense reference projection failed to converge.
    #[error("reference Sinkhorn failed after {iterations} iterations (violation {violation:e})")]
    OracleFailure { iterations: usize, violation: f64 },

    /// An error annotated with the pipeline stage that raised it.
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
