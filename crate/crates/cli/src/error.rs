use thiserror::Error;

/// Process exit codes.
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] winseq::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use winseq::Error as E;
        match self {
            CliError::Config(_) | CliError::Data(_) | CliError::Io(_) => EXIT_INPUT,
            CliError::Core(e) => match e {
                E::Schema(_) | E::Validation(_) | E::Domain(_) | E::InsufficientData(_) | E::Unsupported(_) => {
                    EXIT_INPUT
                }
                E::SearchFailed { .. } => EXIT_INFEASIBLE,
                E::Degenerate(_) | E::UndefinedRatio { .. } | E::Numeric(_) => EXIT_NUMERIC,
            },
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
