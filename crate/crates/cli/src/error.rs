//! CLI error classes, each mapped to a distinct process exit code.

use std::process::ExitCode;

use aoictl_core::anneal::AnnealError;
use aoictl_core::aoi::AoiError;
use aoictl_core::coloring::ColoringError;
use aoictl_core::io::IoError;
use aoictl_core::joac::JoacError;
use aoictl_core::mdp::MdpError;
use aoictl_core::mobility::MobilityError;
use aoictl_core::sim::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("input error: {0}")]
    Input(IoError),
    #[error("estimation error: {0}")]
    Mobility(#[from] MobilityError),
    #[error("mdp error: {0}")]
    Mdp(#[from] MdpError),
    #[error("offload error: {0}")]
    Offload(#[from] JoacError),
    #[error("simulation error: {0}")]
    Sim(#[from] SimError),
    #[error("annealing error: {0}")]
    Anneal(#[from] AnnealError),
    #[error("coloring error: {0}")]
    Coloring(#[from] ColoringError),
    #[error("report error: {0}")]
    Report(String),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io(inner) => CliError::Io(inner),
            other => CliError::Input(other),
        }
    }
}

impl From<AoiError> for CliError {
    fn from(e: AoiError) -> Self {
        CliError::Offload(JoacError::from(e))
    }
}

impl CliError {
    /// Stable exit code per error class; 0 is success, 1 is reserved for
    /// argument parsing (clap).
    pub fn exit_code(&self) -> ExitCode {
        let code: u8 = match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Input(_) => 4,
            CliError::Mobility(_) => 5,
            CliError::Mdp(_) => 6,
            CliError::Offload(_) => 7,
            CliError::Sim(_) => 8,
            CliError::Anneal(_) | CliError::Coloring(_) => 9,
            CliError::Report(_) => 10,
        };
        ExitCode::from(code)
    }
}
