//! Process exit statuses and the error type every command returns.

use std::path::PathBuf;

use secrisk_core::delphi::DelphiError;
use secrisk_core::registry::RegistryError;
use secrisk_core::treatment::TreatmentError;
use secrisk_service::ServiceError;
use thiserror::Error;

/// Exit statuses. `2` is left to argument parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    Usage = 2,
    Invalid = 3,
    Deadlocked = 4,
    Infeasible = 5,
    Unresolved = 6,
    Storage = 7,
    ServiceFailed = 8,
}

impl Status {
    pub const ALL: [Status; 8] = [
        Status::Success,
        Status::Usage,
        Status::Invalid,
        Status::Deadlocked,
        Status::Infeasible,
        Status::Unresolved,
        Status::Storage,
        Status::ServiceFailed,
    ];

    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn meaning(self) -> &'static str {
        match self {
            Status::Success => "success",
            Status::Usage => "bad command-line usage",
            Status::Invalid => "input failed validation",
            Status::Deadlocked => "Delphi session deadlocked at its round cap",
            Status::Infeasible => "treatment plan leaves a risk at or above tolerance",
            Status::Unresolved => "Delphi rounds ran out before consensus, below the round cap",
            Status::Storage => "file or store could not be read or written",
            Status::ServiceFailed => {
                "service failed to start (port busy, store locked or unwritable) or stopped with an error"
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Delphi(#[from] DelphiError),
    #[error(transparent)]
    Treatment(#[from] TreatmentError),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Service(#[from] ServiceError),
}

impl CliError {
    pub fn status(&self) -> Status {
        match self {
            CliError::Registry(e) => match e {
                RegistryError::Io { .. } | RegistryError::StoreLocked(_) | RegistryError::StoreUnwritable { .. } => {
                    Status::Storage
                }
                _ => Status::Invalid,
            },
            CliError::Delphi(_) | CliError::Treatment(_) | CliError::Invalid(_) => Status::Invalid,
            CliError::Io { .. } => Status::Storage,
            CliError::Service(ServiceError::Config(_)) => Status::Invalid,
            CliError::Service(_) => Status::ServiceFailed,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
