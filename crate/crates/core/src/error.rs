use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter `{name}` out of bounds: {value} (allowed {allowed})")]
    BoundExceeded {
        name: &'static str,
        value: String,
        allowed: String,
    },
    #[error("unsupported graph family: {0}")]
    UnsupportedFamily(String),
    #[error("operation requires family {expected}, got {got}")]
    WrongFamily { expected: &'static str, got: String },
    #[error("vertex index {index} out of range (ball has {len} vertices)")]
    VertexOutOfRange { index: usize, len: usize },
    #[error("unknown edge: {0}")]
    UnknownEdge(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("configuration does not belong to this ball")]
    BallMismatch,
    #[error("cannot parse vertex key `{0}`")]
    BadVertexKey(String),
    #[error("cluster {0} does not span")]
    NotSpanning(u32),
    #[error("kernel `{0}` is not in the certified menu")]
    UncertifiedKernel(String),
    #[error("target unreachable: {0}")]
    Unreachable(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid(name, format!("{p} is not a probability in [0, 1]")))
    }
}
