use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("degenerate element: {0}")]
    DegenerateElement(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("numeric guard: {0}")]
    NumericGuard(String),

    #[error("MMA step failed: {0}")]
    StepFailure(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the numerics rather than by the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::DegenerateElement(_)
                | Error::NumericGuard(_)
                | Error::StepFailure(_)
                | Error::InvalidState(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
