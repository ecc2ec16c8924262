use std::collections::BTreeMap;

use crate::model::Phase;

pub type Result<T, E = ReviewError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("session {0} not found")]
    SessionNotFound(String),

    #[error("session {0} already exists")]
    SessionExists(String),

    #[error("annotator {annotator} is not part of session {session}")]
    UnknownAnnotator { session: String, annotator: String },

    #[error("example {0} is not a task in this session")]
    UnknownExample(String),

    #[error("session is in the {actual} phase; this needs {expected}")]
    WrongPhase { expected: Phase, actual: Phase },

    #[error("annotations incomplete: {}", fmt_missing(.missing))]
    Incomplete { missing: BTreeMap<String, usize> },

    #[error("example {0} is not a listed disagreement")]
    NotADisagreement(String),

    #[error("{count} disagreements still unresolved")]
    Unresolved { count: usize },

    #[error("invalid request: {0}")]
    Invalid(String),

    #[error("missing or unknown bearer token")]
    Unauthorized,

    #[error("this token may not {0}")]
    Forbidden(&'static str),

    #[error("session log {path}: line {line}: {message}")]
    CorruptLog {
        path: std::path::PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Core(#[from] labelaudit::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_missing(m: &BTreeMap<String, usize>) -> String {
    m.iter()
        .map(|(a, n)| format!("{a} has {n} tasks left"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl ReviewError {
    pub fn code(&self) -> &'static str {
        match self {
            ReviewError::SessionNotFound(_) => "session_not_found",
            ReviewError::SessionExists(_) => "session_exists",
            ReviewError::UnknownAnnotator { .. } => "unknown_annotator",
            ReviewError::UnknownExample(_) => "unknown_example",
            ReviewError::WrongPhase { .. } => "wrong_phase",
            ReviewError::Incomplete { .. } => "incomplete",
            ReviewError::NotADisagreement(_) => "not_a_disagreement",
            ReviewError::Unresolved { .. } => "unresolved",
            ReviewError::Invalid(_) => "invalid",
            ReviewError::Unauthorized => "unauthorized",
            ReviewError::Forbidden(_) => "forbidden",
            ReviewError::CorruptLog { .. } | ReviewError::Core(_) | ReviewError::Io(_) | ReviewError::Json(_) => "internal",
        }
    }
}
