use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("empty region: label {0} has no voxels")]
    EmptyRegion(u8),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("arity error: expected {expected} meshes, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("attachment region error: {0}")]
    AttachmentRegion(String),

    #[error("simulation unstable: {0}; try a smaller time step")]
    Instability(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("empty mask: no points of the cloud fall inside the box for level {0}")]
    EmptyMask(u8),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate input: {0}")]
    Degeneracy(String),

    #[error("atlas error: {0}")]
    Atlas(String),

    #[error("external completer failed: {message}\n{diagnostics}")]
    ExternalCompleter { message: String, diagnostics: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
