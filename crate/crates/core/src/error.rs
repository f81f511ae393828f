use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AuditError> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: unreadable file, malformed record, violated invariant, bad config.
    Validation,
    /// Valid input on which an analysis precondition does not hold.
    Analysis,
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {index}: field `{field}`: {message}")]
    InvalidRecord {
        index: usize,
        field: &'static str,
        message: String,
    },

    #[error("record {index}: duplicate sample_id `{sample_id}`")]
    DuplicateSampleId { index: usize, sample_id: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("both classes are required ({members} members, {non_members} non-members)")]
    ClassAbsent { members: usize, non_members: usize },

    #[error("sample {sample}: {message}")]
    InsufficientModels { sample: usize, message: String },

    #[error("trace {trace}, step {step}: {message}")]
    Unresolvable {
        trace: String,
        step: usize,
        message: String,
    },

    #[error("{0}")]
    Analysis(String),
}

impl AuditError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            AuditError::Io { .. }
            | AuditError::Parse { .. }
            | AuditError::InvalidRecord { .. }
            | AuditError::DuplicateSampleId { .. }
            | AuditError::InvalidConfig(_)
            | AuditError::ClassAbsent { .. } => ErrorKind::Validation,
            AuditError::InsufficientModels { .. }
            | AuditError::Unresolvable { .. }
            | AuditError::Analysis(_) => ErrorKind::Analysis,
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        AuditError::InvalidConfig(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AuditError::Io {
            path: path.into(),
            source,
        }
    }
}
