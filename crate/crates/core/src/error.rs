use thiserror::Error;

/// Errors raised by guidance arithmetic, the mixture backend and the sampler.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegaError {
    #[error("shape mismatch: expected dimension {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("empty vector: dimension must be positive")]
    EmptyVector,

    #[error("{name} = {value} is outside the permitted range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("no component carries all of the tags [{}]", tags.join(", "))]
    EmptySelection { tags: Vec<String> },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("non-finite latent at step {step} (t = {t})")]
    NonFiniteLatent { step: usize, t: usize },

    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T, E = SegaError> = std::result::Result<T, E>;
