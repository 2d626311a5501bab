use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure classes surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: line {line}: {message}")]
    Record {
        path: String,
        line: usize,
        message: String,
    },

    #[error("model file error: {0}")]
    Format(String),

    #[error("vocabulary hash mismatch: model was built with {expected}, input uses {actual}")]
    VocabMismatch { expected: String, actual: String },

    #[error("numeric divergence at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("solver did not converge after {iterations} pair updates (max KKT violation {violation:.3e})")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Process exit code for this failure class.
    ///
    /// 2: configuration, 3: data or files, 4: numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_)
            | Error::Record { .. }
            | Error::Format(_)
            | Error::VocabMismatch { .. }
            | Error::Io { .. } => 3,
            Error::Divergence { .. } | Error::NotConverged { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(format!("json: {e}"))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(format!("csv: {e}"))
    }
}
