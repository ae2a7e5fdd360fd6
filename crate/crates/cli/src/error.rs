use std::fmt;

use camoguard_core::Error as CoreError;
use serde::Serialize;

/// Failure category; each maps to its own exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Usage,
    Config,
    Io,
    Schema,
    Runtime,
    GradCheck,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 2,
            Kind::Config => 3,
            Kind::Io => 4,
            Kind::Schema => 5,
            Kind::Runtime => 6,
            Kind::GradCheck => 7,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn config(e: impl fmt::Display) -> Self {
        CliError::new(Kind::Config, e.to_string())
    }

    /// The single-line JSON written to stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let kind = match &e {
            CoreError::Io { .. } => Kind::Io,
            CoreError::Csv(_)
            | CoreError::Json(_)
            | CoreError::PgmHeader(_)
            | CoreError::PgmTruncated { .. }
            | CoreError::IntensityOutOfRange { .. }
            | CoreError::Manifest(_)
            | CoreError::MissingWeakView(_)
            | CoreError::RaggedViews { .. }
            | CoreError::ProbabilitySum { .. }
            | CoreError::Checkpoint(_)
            | CoreError::DuplicateId(_)
            | CoreError::IdMismatch(_) => Kind::Schema,
            CoreError::Input(_) => Kind::Config,
            _ => Kind::Runtime,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(Kind::Io, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
