use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("natural parameter outside the domain of {family}: {detail}")]
    OutsideDomain {
        family: &'static str,
        detail: String,
    },

    #[error("{0} is not an exponential family with learnable natural parameters")]
    NotExponentialFamily(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "normal equations are not positive definite (ridge = {ridge}); retry with a larger ridge"
    )]
    Factorization { ridge: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("latent support too large for exact enumeration: {0}")]
    SupportTooLarge(String),

    #[error("readouts are stale: fitted in sleep phase {fitted}, latest sleep phase is {current}")]
    StaleApprox { fitted: u64, current: u64 },

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("malformed data file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
