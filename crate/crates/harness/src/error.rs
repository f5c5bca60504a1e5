use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical abort: {message} (diagnostics written to {})", dump.display())]
    Numerical { message: String, dump: PathBuf },
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Verify(_) => 1,
            HarnessError::Config(_) => 2,
            HarnessError::Numerical { .. } => 3,
            // Unwritable outputs are reported as configuration problems.
            HarnessError::Io(_) | HarnessError::Csv(_) => 2,
        }
    }
}

impl From<covbench_core::Error> for HarnessError {
    /// Core errors raised while validating inputs.
    fn from(e: covbench_core::Error) -> Self {
        match e {
            covbench_core::Error::Config(m) => HarnessError::Config(m),
            other => HarnessError::Config(other.to_string()),
        }
    }
}
