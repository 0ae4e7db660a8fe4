use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_CAPACITY: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in {field}: {message}")]
    Config { field: String, message: String },

    #[error("{failed} of {total} ensemble members diverged; partial results were saved")]
    Diverged { failed: usize, total: usize },

    #[error(transparent)]
    Engine(#[from] qsntk::error::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use qsntk::error::Error as E;
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Diverged { .. } | CliError::Engine(E::Divergence { .. }) => EXIT_DIVERGENCE,
            CliError::Engine(E::Capacity { .. }) => EXIT_CAPACITY,
            _ => EXIT_OTHER,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
