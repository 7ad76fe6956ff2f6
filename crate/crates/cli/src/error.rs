use std::fmt;
use std::path::Path;

use icadetect::pipeline::PipelineError;
use icadetect::text::TextError;

/// Failure of a subcommand, carrying the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit 2).
    Config(String),
    /// Unreadable or malformed input (exit 3).
    Data(String),
    /// A numerical routine failed (exit 4).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<TextError> for CliError {
    fn from(e: TextError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Text(t) => CliError::Data(t.to_string()),
            PipelineError::FoldTooSmall(_) | PipelineError::InvalidBundle(_) => CliError::Data(e.to_string()),
            PipelineError::GridEmpty(_) | PipelineError::InvalidGrid(_) => CliError::Config(e.to_string()),
            PipelineError::DimensionMismatch(_) => CliError::Data(e.to_string()),
            PipelineError::Pca(_)
            | PipelineError::Ica(_)
            | PipelineError::Svm(_)
            | PipelineError::Eval(_)
            | PipelineError::IllConditioned(_) => CliError::Numerical(e.to_string()),
        }
    }
}
