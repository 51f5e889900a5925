use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },
    #[error("backward requires a scalar loss node, got shape {0}")]
    NonScalarLoss(String),
    #[error("non-finite loss value {0}")]
    NonFiniteLoss(f64),
    #[error("non-finite gradient for parameter '{0}'; step refused")]
    NonFiniteGradient(String),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}
