use std::fmt;
use std::path::PathBuf;

use rsir_core::Error;

pub const USAGE: u8 = 2;
pub const IO: u8 = 3;
pub const FORMAT: u8 = 4;
pub const DIMENSION: u8 = 5;
pub const DATA: u8 = 6;
pub const INDEX_MISSING: u8 = 7;
pub const EMPTY_INDEX: u8 = 8;
pub const EVALUATION: u8 = 9;
pub const VALIDATION: u8 = 10;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Usage(String),
    IndexMissing(PathBuf),
    ValidationFailed(usize),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => USAGE,
            CliError::IndexMissing(_) => INDEX_MISSING,
            CliError::ValidationFailed(_) => VALIDATION,
            CliError::Core(e) => match e {
                Error::Io { .. } => IO,
                Error::Format { .. } => FORMAT,
                Error::Dimension { .. } => DIMENSION,
                Error::EmptyIndex => EMPTY_INDEX,
                Error::Evaluation(_) => EVALUATION,
                Error::Data(_)
                | Error::InsufficientData { .. }
                | Error::EmptyCollection(_)
                | Error::DuplicateId(_)
                | Error::Manifest(_) => DATA,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::IndexMissing(p) => write!(f, "index file {} does not exist", p.display()),
            CliError::ValidationFailed(n) => {
                write!(f, "dataset failed validation with {n} issue(s)")
            }
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct_per_class() {
        let errors = [
            CliError::Usage("x".into()),
            CliError::Core(Error::Io {
                path: "p".into(),
                source: std::io::Error::other("x"),
            }),
            CliError::Core(Error::Format {
                source_name: "f".into(),
                offset: 0,
                reason: "r".into(),
            }),
            CliError::Core(Error::Dimension {
                expected: 1,
                found: 2,
            }),
            CliError::Core(Error::Data("x".into())),
            CliError::IndexMissing("i".into()),
            CliError::Core(Error::EmptyIndex),
            CliError::Core(Error::Evaluation("x".into())),
            CliError::ValidationFailed(1),
        ];
        let mut codes: Vec<u8> = errors.iter().map(CliError::code).collect();
        assert!(codes.iter().all(|&c| c >= 2));
        codes.dedup();
        assert_eq!(codes.len(), errors.len());
    }
}
