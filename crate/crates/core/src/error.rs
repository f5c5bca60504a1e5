use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("enumeration cap exceeded: {completions} completions per prompt (cap {cap})")]
    EnumerationCap { completions: u128, cap: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
