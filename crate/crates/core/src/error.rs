use std::path::PathBuf;

/// Errors produced by the library and the pipeline stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value violated an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),
    /// A configuration value is out of range.
    #[error("invalid config: {0}")]
    Config(String),
    /// A stage expected an artifact that does not exist.
    #[error("missing artifact: expected {}", .0.display())]
    MissingArtifact(PathBuf),
    /// A JSONL row failed to parse or validate.
    #[error("{}: row {row}: field `{field}`: {message}", path.display())]
    Schema {
        path: PathBuf,
        row: usize,
        field: String,
        message: String,
    },
    /// A JSON document failed to parse or validate.
    #[error("{}: field `{field}`: {message}", path.display())]
    Document {
        path: PathBuf,
        field: String,
        message: String,
    },
    /// A checkpoint file is malformed.
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error("prompt {index}: {source}")]
    AtPrompt {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Input(_)
            | Error::Config(_)
            | Error::MissingArtifact(_)
            | Error::Schema { .. }
            | Error::Document { .. }
            | Error::Checkpoint { .. } => true,
            Error::AtPrompt { source, .. } | Error::Stage { source, .. } => source.is_validation(),
            Error::Io { .. } | Error::Json(_) => false,
        }
    }
}
