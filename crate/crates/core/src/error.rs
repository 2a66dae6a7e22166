use thiserror::Error;

/// Errors raised anywhere in the transmit/channel/receive chain.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid generator state: {0}")]
    InvalidState(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("framing error: {0}")]
    Framing(String),

    #[error("unsupported arity: expected {expected} branches, got {got}")]
    UnsupportedArity { expected: usize, got: usize },

    #[error("power ordering violated: {0}")]
    Ordering(String),

    #[error("ambiguous constellation: {0}")]
    Ambiguous(String),

    #[error("synchronization failed: peak metric {peak:.3} below threshold {threshold}")]
    SyncFailure { peak: f64, threshold: f64 },

    #[error("channel estimate singular on data subcarrier {subcarrier}")]
    EstimationSingular { subcarrier: usize },

    #[error("equalization failed: singular response on data subcarrier {subcarrier}")]
    Equalization { subcarrier: usize },

    #[error("accounting error: {0}")]
    Accounting(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Attaches the name of the pipeline stage that produced the error.
    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error under any stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
