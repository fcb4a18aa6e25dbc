use std::path::Path;

use serde::Serialize;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("missing inputs: {}", .0.join(", "))]
    MissingInputs(Vec<String>),

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] cbfl::Error),
}

/// What gets printed on stderr when a command fails.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub category: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::MissingInputs(_) => "missing_input",
            CliError::Data(_) => "data",
            CliError::Core(e) => match e {
                cbfl::Error::Config(_) => "config",
                cbfl::Error::Io(_) => "io",
                cbfl::Error::Parse { .. } | cbfl::Error::Schema(_) | cbfl::Error::Csv(_) => "data",
                cbfl::Error::Dimension { .. } | cbfl::Error::Shape(_) => "dimension",
                cbfl::Error::Empty(_) | cbfl::Error::Metric(_) => "data",
                cbfl::Error::NonFinite(_) => "numeric",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "io" => 3,
            "missing_input" => 4,
            "data" => 5,
            "dimension" => 6,
            _ => 7,
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            category: self.category(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(cbfl::Error::Csv(e))
    }
}
