use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flag values or configuration; reported before any work starts.
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Run(#[from] cfgnn::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

/// Turns a failed module-level validation into an argument error.
pub fn usage<T>(r: cfgnn::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}
