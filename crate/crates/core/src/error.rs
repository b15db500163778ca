use thiserror::Error;

/// Errors shared by all subsystems.
///
/// `Config` means the caller supplied an impossible setup (bad dimensions,
/// unknown topology, empty codebook). `Usage` means a valid object was used
/// out of contract (step after done, mismatched factor counts). `Fault` is a
/// runtime failure inside a training loop (NaN loss, non-finite gradient)
/// and aborts the run.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("training fault: {0}")]
    Fault(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed data: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn fault(msg: impl Into<String>) -> Self {
        Error::Fault(msg.into())
    }
}
