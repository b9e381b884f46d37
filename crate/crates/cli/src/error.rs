use casf_core::ErrorClass;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] casf_core::Error),
    /// A check ran to completion and reported failure.
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub class: &'a str,
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CliError::Usage(_) => ErrorClass::Usage,
            CliError::Data(_) => ErrorClass::Data,
            CliError::Core(e) => e.class(),
            CliError::Failed(_) => ErrorClass::Numerical,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }

    pub fn record(&self) -> ErrorRecord<'static> {
        ErrorRecord {
            class: match self.class() {
                ErrorClass::Usage => "usage",
                ErrorClass::Data => "data",
                ErrorClass::Numerical => "numerical",
            },
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}
