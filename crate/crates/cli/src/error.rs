use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] elastocal::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 3 for numerical failures, 2 for everything attributable to the input.
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Core(e) if e.is_numerical() => ExitCode::from(3),
            _ => ExitCode::from(2),
        }
    }
}
