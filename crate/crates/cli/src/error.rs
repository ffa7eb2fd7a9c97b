use std::fmt;

use sap_core::angle::AngleError;
use sap_core::autodiff::AutodiffError;
use sap_core::io::{CheckpointError, ConfigParseError};
use sap_core::sap::SapError;
use sap_core::skeleton::{NtuError, SkeletonError};
use sap_core::train::TrainError;

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config (exit 1).
    Usage(String),
    /// Unreadable or malformed input (exit 2).
    Data(String),
    /// Non-finite values or a failed gradient check (exit 3).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn context(self, what: impl fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{what}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigParseError> for CliError {
    fn from(e: ConfigParseError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SkeletonError> for CliError {
    fn from(e: SkeletonError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NtuError> for CliError {
    fn from(e: NtuError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AngleError> for CliError {
    fn from(e: AngleError) -> Self {
        match e {
            AngleError::UnknownJointName(_) | AngleError::OddNameCount(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SapError> for CliError {
    fn from(e: SapError) -> Self {
        match e {
            SapError::InvalidParams(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            TrainError::DivergenceDetected { .. } | TrainError::Autodiff(_) => {
                CliError::Numeric(e.to_string())
            }
            TrainError::Sap(e) => e.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}
