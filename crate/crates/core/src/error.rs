use thiserror::Error;

/// Errors produced across the embodiment, policy, and training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid embodiment: {0}")]
    InvalidEmbodiment(String),

    #[error("unsupported variation: {0}")]
    UnsupportedVariation(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("URDF parse error: {0}")]
    Parse(String),

    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("non-finite environment state")]
    NonFiniteState,

    #[error("curriculum coefficient {0} outside [0, 1]")]
    InvalidCurriculum(f64),

    #[error("no expert available for embodiment {0}")]
    MissingExpert(String),

    #[error("slice buffer exhausted")]
    BufferExhausted,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
