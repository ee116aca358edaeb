use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented domain invariant.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration document failed validation; `path` names the offending field.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A request was illegal for the current state of a session or study.
    #[error("state error: {0}")]
    State(String),

    /// A numerical routine failed (non-finite likelihood, all-NaN objective, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unknown {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Json(_) | Error::Domain(_) => 2,
            Error::State(_) | Error::NotFound { .. } => 3,
            Error::Numerical(_) => 4,
            Error::Io(_) | Error::Csv(_) => 1,
        }
    }
}
