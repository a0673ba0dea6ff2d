use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// The variants map onto the process exit codes used by the CLI:
/// contract-style failures exit with 1, numeric or training failures with 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by `{op}`: {detail}")]
    Numeric { op: String, detail: String },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Training { epoch: usize, detail: String },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("every augmentation fell below pruning threshold {threshold}; force-execute the argmax entry instead")]
    DegeneratePlan { threshold: f32 },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    /// True for failures of the numeric kind (non-finite values, divergence).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. } | Error::Training { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
