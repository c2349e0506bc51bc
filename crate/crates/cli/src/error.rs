use std::fmt;

use nnsparse::Error;

/// Failure of a command, tagged with the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Io(String),
    Usage(String),
    Parse(String),
    Numeric(String),
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Parse(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Infeasible(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Io(m) => ("i/o error", m),
            CliError::Usage(m) => ("usage error", m),
            CliError::Parse(m) => ("parse error", m),
            CliError::Numeric(m) => ("numeric failure", m),
            CliError::Infeasible(m) => ("infeasible specification", m),
        };
        write!(f, "{}: {}", kind, msg)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidSupport(_)
            | Error::InvalidArgument(_)
            | Error::EmptyComplement
            | Error::TooLarge { .. } => CliError::Usage(msg),
            Error::DimensionMismatch(_) | Error::NonFinite(_) | Error::ZeroAtom(_) => {
                CliError::Parse(msg)
            }
            Error::RankDeficient { .. } | Error::Precondition(_) | Error::NumericFailure(_) => {
                CliError::Numeric(msg)
            }
            Error::InfeasibleSpec(_) => CliError::Infeasible(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
