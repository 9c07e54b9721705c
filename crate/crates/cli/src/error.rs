use std::fmt;

use geomeld_autograd::TensorError;
use geomeld_core::caption::CaptionError;
use geomeld_core::eval::EvalError;
use geomeld_core::kv::ConfigError;
use geomeld_core::model::ModelError;
use geomeld_core::synth::{FormatError, SynthError};
use geomeld_core::trainer::TrainError;

/// Process exit status classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { status: Status::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { status: Status::Data, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { status: Status::Numeric, message: message.into() }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::usage(format!("invalid configuration: {e}"))
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(m) => Self::usage(m),
            other => Self::data(other.to_string()),
        }
    }
}

impl From<CaptionError> for CliError {
    fn from(e: CaptionError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::ConfigFile(c) => c.into(),
            ModelError::Config(m) => Self::usage(m),
            ModelError::Tensor(t @ TensorError::NonFinite { .. }) => Self::numeric(t.to_string()),
            other => Self::data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            return Self::numeric(e.to_string());
        }
        match e {
            TrainError::Config(c) => c.into(),
            TrainError::Model(m) => m.into(),
            other => Self::data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            other => Self::data(other.to_string()),
        }
    }
}
