use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code contract:
/// parameter/config/usage problems exit 2, data problems exit 3, numeric
/// failures exit 4.
#[derive(Debug, Error)]
pub enum SpanError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error in {path}: {msg}")]
    Data { path: String, msg: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("unreachable target: {0}")]
    Unreachable(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SpanError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SpanError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(path: impl Into<String>, msg: impl Into<String>) -> Self {
        SpanError::Data {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Stable exit code for scripting: 2 usage/config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            SpanError::Parameter(_) | SpanError::Config(_) | SpanError::Contract(_) => 2,
            SpanError::Data { .. } | SpanError::Io { .. } => 3,
            SpanError::Numeric(_) | SpanError::ShapeMismatch { .. } | SpanError::Unreachable(_) => {
                4
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, SpanError>;
