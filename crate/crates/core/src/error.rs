use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("range error: {0}")]
    Range(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("value error: {0}")]
    Value(String),
    #[error("training error: non-finite loss {loss} at step {step}")]
    Diverged { step: usize, loss: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable tag used in machine-parseable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Range(_) => "range",
            Error::Param(_) => "parameter",
            Error::Shape(_) => "shape",
            Error::Format(_) => "format",
            Error::Length(_) => "length",
            Error::Value(_) => "value",
            Error::Diverged { .. } => "training",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
