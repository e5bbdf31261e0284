use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    /// Config or data file problem, with location where known.
    #[error("{0}")]
    Parse(String),

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("{0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Parse(_) | CliError::Io(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<CliError> for ExitCode {
    fn from(e: CliError) -> Self {
        ExitCode::from(e.exit_code())
    }
}

impl From<magnon_cavity::Error> for CliError {
    fn from(e: magnon_cavity::Error) -> Self {
        use magnon_cavity::Error as E;
        match e {
            E::InvalidParameter { .. } | E::FitSetup(_) => CliError::Parse(e.to_string()),
            E::Domain(_) | E::StepTooLarge { .. } | E::FlatSpectrum(_) | E::Numeric(_) => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
