use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("degenerate point set: {0}")]
    DegenerateHull(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("grid of {requested} samples exceeds cap of {cap}")]
    GridTooFine { requested: usize, cap: usize },

    #[error("no convergent samples in the sampled region")]
    NoConvergentSamples,

    #[error("unbounded polytope: {0}")]
    Unbounded(String),

    #[error("digest mismatch for {field}: certificate {expected}, system {got}")]
    DigestMismatch {
        field: String,
        expected: String,
        got: String,
    },

    #[error("repeated counterexample at iteration {iteration}: learner failed to separate it")]
    RepeatedCounterexample { iteration: usize },

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(expected: usize, got: usize, context: &str) -> Self {
        Error::DimensionMismatch {
            expected,
            got,
            context: context.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
