use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter {coords:?} lies outside the parameter box")]
    Domain { coords: Vec<f64> },

    #[error("domain error: {0}")]
    InvalidValue(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular matrix block `{block}`")]
    Singular { block: &'static str },

    #[error(
        "degenerate posterior (all grid nodes have zero density) in scenario `{scenario}`{}",
        match (seed, trial) {
            (Some(s), Some(t)) => format!(" (seed {s}, trial {t})"),
            _ => String::new(),
        }
    )]
    DegeneratePosterior {
        scenario: String,
        seed: Option<u64>,
        trial: Option<u64>,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("{failed} of {total} trials aborted; first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by a bad scenario description rather than a
    /// numerical or runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
