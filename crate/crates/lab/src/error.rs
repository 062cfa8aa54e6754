use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] unlearn_core::Error),
    #[error("cannot access `{}`: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        LabError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for malformed or mismatched file contents.
    pub fn is_format(&self) -> bool {
        matches!(self, LabError::Core(unlearn_core::Error::Format(_)))
    }
}

pub type LabResult<T> = Result<T, LabError>;
