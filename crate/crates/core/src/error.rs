use alloc::string::String;

/// Errors raised by the unlearning core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("containment error: {0}")]
    Containment(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("policy error: {0}")]
    Policy(String),
    #[error("method error: {0}")]
    Method(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("comparison error: {0}")]
    Comparison(String),
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
