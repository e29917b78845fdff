//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an argument precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// An utterance is too short to produce at least one analysis frame.
    #[error("utterance too short: {0}")]
    UtteranceTooShort(String),
    /// Malformed or inconsistent input data (manifests, feature tables).
    #[error("data error: {0}")]
    Data(String),
    /// Shape or dimensionality mismatch between arrays.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// Training diverged or produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A pipeline stage failed; carries the stage name for diagnostics.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// Wrap an error with the name of the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
