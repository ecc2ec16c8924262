use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate example id {0:?}")]
    DuplicateId(String),

    #[error("example {id:?}: label {label} is not 0 or 1")]
    LabelDomain { id: String, label: i64 },

    #[error("example {id:?}: missing or empty field `{field}`")]
    MissingField { id: String, field: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("template {template:?} must contain {placeholder} exactly once")]
    Template {
        template: String,
        placeholder: &'static str,
    },

    #[error("unparseable response from {model_id}: {raw:?}")]
    Unparseable { model_id: String, raw: String },

    #[error("provider {model_id}: {message}")]
    Provider { model_id: String, message: String },

    #[error("environment variable {0} is not set")]
    MissingEnv(String),

    #[error("missing judgment for example {example_id:?} from ({model_id}, {prompt_id})")]
    MissingJudgment {
        example_id: String,
        model_id: String,
        prompt_id: String,
    },

    #[error("missing label for example {0:?}")]
    MissingLabel(String),

    #[error("disagreement on example {0:?} has no expert resolution")]
    Unresolved(String),

    #[error("bin {index} [{lower}, {upper}) holds {count} flagged examples, fewer than {min_count}; coarsen the bin edges")]
    UnderpopulatedBin {
        index: usize,
        lower: f64,
        upper: f64,
        count: usize,
        min_count: usize,
    },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("degenerate configuration: {0}")]
    DegenerateConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status: 1 for invalid input or configuration, 2 for
    /// provider failures, 3 for inputs an earlier stage has not produced.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Provider { .. } | Error::Unparseable { .. } | Error::MissingEnv(_) => 2,
            Error::MissingInput(_)
            | Error::MissingJudgment { .. }
            | Error::MissingLabel(_)
            | Error::Unresolved(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
