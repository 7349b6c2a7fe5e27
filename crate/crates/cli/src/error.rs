use rjm::RjmError;
use thiserror::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("every experiment cell failed; see the status column of {0}")]
    AllCellsFailed(String),

    #[error(transparent)]
    Lib(#[from] RjmError),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 2 for bad input or usage, 3 for numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::AllCellsFailed(_) => EXIT_NUMERICAL,
            CliError::Lib(e) if e.is_input_error() => EXIT_USAGE,
            CliError::Lib(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::usage("x").exit_code(), 2);
        assert_eq!(CliError::from(RjmError::AllRunsDiscarded { starts: 3 }).exit_code(), 3);
        let parse = RjmError::Parse {
            context: "line 2".into(),
            message: "bad".into(),
        };
        assert_eq!(CliError::from(parse).exit_code(), 2);
    }
}
