use std::fmt;

use melody_core::audio::AudioError;
use melody_core::cfp::CfpError;
use melody_core::dsp::DspError;
use melody_core::eval::EvalError;
use melody_core::models::ModelError;
use melody_core::neural::NnError;
use melody_core::training::TrainingError;

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or manifest content (exit 2).
    Usage(String),
    /// Unreadable or unwritable files and malformed input data (exit 3).
    Io(String),
    /// Model, checkpoint or shape problems (exit 4).
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Model(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Model(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        match e {
            AudioError::Manifest { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Model(e.to_string()),
        }
    }
}

impl From<DspError> for CliError {
    fn from(e: DspError) -> Self {
        match e {
            DspError::Audio(a) => a.into(),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<CfpError> for CliError {
    fn from(e: CfpError) -> Self {
        match e {
            CfpError::Io(_) => CliError::Io(e.to_string()),
            CfpError::Dsp(d) => d.into(),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Nn(n) => n.into(),
            ModelError::Cfp(c) => c.into(),
            ModelError::Dsp(d) => d.into(),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Nn(n) => n.into(),
            TrainingError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) => CliError::Io(e.to_string()),
            EvalError::InvalidTolerance(_) => CliError::Usage(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}
