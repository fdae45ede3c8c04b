use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension error in `{op}`: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("non-finite value produced by kernel `{kernel}`")]
    NonFinite { kernel: &'static str },
}

impl NumError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        NumError::Dimension {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = NumError> = std::result::Result<T, E>;
