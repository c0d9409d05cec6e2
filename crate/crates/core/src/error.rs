use std::fmt;

/// Library error. Each variant maps onto a stable [`ErrorKind`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("spectral error: {0}")]
    Spectral(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("bound unavailable: {0}")]
    BoundUnavailable(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification shared by the CLI exit codes and the C ABI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Domain,
    Model,
    Unsupported,
    Contract,
    Hypothesis,
    Numerical,
    Spectral,
    Degenerate,
    Parameter,
    Config,
    Data,
    BoundUnavailable,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Domain(_) => ErrorKind::Domain,
            Error::Model(_) => ErrorKind::Model,
            Error::Unsupported(_) => ErrorKind::Unsupported,
            Error::Contract(_) => ErrorKind::Contract,
            Error::Hypothesis(_) => ErrorKind::Hypothesis,
            Error::Numerical(_) => ErrorKind::Numerical,
            Error::Spectral(_) => ErrorKind::Spectral,
            Error::Degenerate(_) => ErrorKind::Degenerate,
            Error::Parameter(_) => ErrorKind::Parameter,
            Error::Config(_) | Error::Json(_) => ErrorKind::Config,
            Error::Data(_) => ErrorKind::Data,
            Error::BoundUnavailable(_) => ErrorKind::BoundUnavailable,
            Error::Io(_) => ErrorKind::Io,
        }
    }

    /// True for errors caused by bad user input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self.kind(),
            ErrorKind::Config
                | ErrorKind::Parameter
                | ErrorKind::Unsupported
                | ErrorKind::Domain
                | ErrorKind::Io
                | ErrorKind::Model
        )
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorKind::Domain => "domain",
            ErrorKind::Model => "model",
            ErrorKind::Unsupported => "unsupported",
            ErrorKind::Contract => "contract",
            ErrorKind::Hypothesis => "hypothesis",
            ErrorKind::Numerical => "numerical",
            ErrorKind::Spectral => "spectral",
            ErrorKind::Degenerate => "degenerate",
            ErrorKind::Parameter => "parameter",
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::BoundUnavailable => "bound_unavailable",
            ErrorKind::Io => "io",
        };
        f.write_str(s)
    }
}
