//! Failure classification for the exit-code contract: usage and
//! configuration problems exit 1, runtime failures exit 2.

use std::fmt;

use roam::checkpoint::CheckpointError;
use roam::env::EnvError;
use roam::geometry::GeomError;
use roam::trainer::TrainError;

#[derive(Debug)]
pub enum CliError {
    /// The invocation or an input file is wrong; nothing was attempted.
    Usage(String),
    /// The computation itself failed after inputs were accepted.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }

    pub fn runtime(err: impl Into<anyhow::Error>) -> CliError {
        CliError::Runtime(err.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::BadConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(anyhow::Error::new(other)),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::BadConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(anyhow::Error::new(other)),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Train(t) => t.into(),
            // Version, hash, and shape mismatches mean the wrong file was
            // handed in, not that the computation failed.
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<GeomError> for CliError {
    fn from(e: GeomError) -> Self {
        CliError::Runtime(anyhow::Error::new(e))
    }
}
