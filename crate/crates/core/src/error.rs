use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented contract.
    #[error("configuration error: {0}")]
    Config(String),
    /// A call was made with arguments outside the operation's domain.
    #[error("usage error: {0}")]
    Usage(String),
    /// Rollouts do not match the old-policy snapshot they claim to come from.
    #[error("integrity error: {0}")]
    Integrity(String),
    /// Parameters or objective became non-finite during training.
    #[error("non-finite value at step {step}, inner epoch {epoch}: {what}")]
    NonFinite {
        step: usize,
        epoch: usize,
        what: String,
        /// JSON dump of the offending step's batch.
        dump: String,
    },
    /// Parameter file does not match the environment's dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
