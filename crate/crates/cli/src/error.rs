use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        })
    }
}

impl From<betaar::Error> for CliError {
    fn from(e: betaar::Error) -> Self {
        match e {
            betaar::Error::Singular { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("I/O error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
