use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate frame: no points within {range_m} m")]
    DegenerateFrame { range_m: f64 },
    #[error("could not place {boxes} boxes without overlap after {attempts} attempts")]
    Placement { boxes: usize, attempts: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// True for errors that come from numerics rather than input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
