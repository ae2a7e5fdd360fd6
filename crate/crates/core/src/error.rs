use std::path::PathBuf;

use thiserror::Error;

use crate::types::SampleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("sample {0} is present on only one side of the comparison")]
    IdMismatch(SampleId),

    #[error("duplicate sample id {0}")]
    DuplicateId(SampleId),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },

    #[error("malformed PGM header: {0}")]
    PgmHeader(String),

    #[error("truncated PGM payload: expected {expected} bytes, found {actual}")]
    PgmTruncated { expected: usize, actual: usize },

    #[error("intensity {value} out of range [0, 1] at pixel {index}")]
    IntensityOutOfRange { index: usize, value: f64 },

    #[error("manifest mismatch: {0}")]
    Manifest(String),

    #[error("sample {0} has no weak view `w`")]
    MissingWeakView(SampleId),

    #[error("sample {id} has {found} strong views, expected {expected}")]
    RaggedViews {
        id: SampleId,
        expected: usize,
        found: usize,
    },

    #[error("sample {id} view {view}: probabilities sum to {sum}")]
    ProbabilitySum {
        id: SampleId,
        view: String,
        sum: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("human channel has no judgment for sample {0}")]
    ChannelMissing(SampleId),

    #[error("human channel failed on sample {id}: {reason}")]
    Channel { id: SampleId, reason: String },

    #[error("training aborted at epoch {epoch}, iteration {iteration}: non-finite loss")]
    Diverged { epoch: usize, iteration: usize },

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("session incomplete: {remaining} deferred items still need a judgment")]
    SessionIncomplete { remaining: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
