use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid robot model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("singular configuration: Jacobian condition number {condition:.3e}")]
    SingularConfiguration { condition: f64 },

    /// The information matrix of a plan cannot be inverted. `unobservable_joints`
    /// lists (1-based) the joints dominating the null-space directions.
    #[error(
        "singular information matrix (eigenvalue ratio {ratio:.3e}); unobservable joints: {unobservable_joints:?}"
    )]
    SingularInformation {
        unobservable_joints: Vec<usize>,
        directions: Vec<Vec<f64>>,
        ratio: f64,
    },

    #[error("rank deficiency: {rows} observation rows cannot identify {parameters} parameters")]
    RankDeficient { rows: usize, parameters: usize },

    #[error("constraints admit no feasible configuration after {attempts} samples")]
    InfeasibleConstraints { attempts: usize },

    #[error("sampling budget exhausted after {attempts} attempts")]
    SamplingExhausted { attempts: usize },

    #[error("{failed} of {trials} Monte Carlo trials failed")]
    TooManyFailedTrials { failed: usize, trials: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical pipeline, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularConfiguration { .. }
                | Error::SingularInformation { .. }
                | Error::RankDeficient { .. }
                | Error::InfeasibleConstraints { .. }
                | Error::SamplingExhausted { .. }
                | Error::TooManyFailedTrials { .. }
        )
    }
}
