use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration. `path` names the offending key
    /// or object when one is known.
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A numerical operation failed (singular matrix, non-finite values).
    #[error("numerical failure in {context}: {message}")]
    Numerical { context: String, message: String },

    /// A protocol rule was violated by the caller.
    #[error("logic error: {0}")]
    Logic(String),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn numerical(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Prefix the context of a numerical error, e.g. with the step index.
    pub fn with_context(self, outer: impl std::fmt::Display) -> Self {
        match self {
            Error::Numerical { context, message } => Error::Numerical {
                context: format!("{outer}: {context}"),
                message,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
