//! Process-level error split: user mistakes (bad config, missing files)
//! exit 2, numerical failures (divergence, failed gradient check) exit 3.
//! Either way the user sees one structured message, never a panic trace.

use tsviz_core::checkpoint::CheckpointError;
use tsviz_core::data::DataError;
use tsviz_core::model::ModelError;
use tsviz_core::perturb::PerturbError;
use tsviz_core::trainer::TrainError;
use tsviz_core::viz::VizError;

#[derive(Debug)]
pub enum CliError {
    User(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::User(m) | CliError::Numerical(m) => m,
        }
    }
}

pub fn user(msg: impl Into<String>) -> CliError {
    CliError::User(msg.into())
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::User(format!("io: {e}"))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> CliError {
        CliError::User(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> CliError {
        CliError::User(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> CliError {
        CliError::User(e.to_string())
    }
}

impl From<VizError> for CliError {
    fn from(e: VizError) -> CliError {
        CliError::User(e.to_string())
    }
}

impl From<PerturbError> for CliError {
    fn from(e: PerturbError) -> CliError {
        CliError::User(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> CliError {
        match &e {
            TrainError::Diverged { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}
