use std::fmt;
use std::process::ExitCode;

use intermittence::report::ReportError;
use intermittence::{ClassifyError, SimError, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad flags, config, specs or scenario files. Exit code 1.
    Usage,
    /// Input data that cannot be read or is inconsistent. Exit code 2.
    Data,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub error: anyhow::Error,
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError { kind: Kind::Usage, error: anyhow::anyhow!("{msg}") }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        CliError { kind: Kind::Data, error: anyhow::anyhow!("{msg}") }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self.kind {
            Kind::Usage => ExitCode::from(1),
            Kind::Data => ExitCode::from(2),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<ClassifyError> for CliError {
    fn from(e: ClassifyError) -> Self {
        let name = match &e {
            ClassifyError::DuplicateLabel(_) => "DuplicateLabel",
            ClassifyError::MissingExclusionPartner { .. } => "MissingExclusionPartner",
            ClassifyError::InvalidSpec { .. } => "InvalidSpec",
        };
        CliError::usage(format!("{name}: {e}"))
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::usage(e)
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::InvalidTaxonomy(_) => CliError::usage(e),
            _ => CliError::data(e),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::data(e)
    }
}
