use std::path::{Path, PathBuf};

use conceptgrid::checkpoint::CheckpointError;
use conceptgrid::config::ConfigError;
use conceptgrid::policy::PolicyError;
use conceptgrid::synthbench::SynthError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{message} (trace: {trace})")]
    NonFinite { message: String, trace: String },
    #[error("{0}")]
    Numerics(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::NonFinite { .. } | CliError::Numerics(_) => 4,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    /// Maps a training error, pointing non-finite failures at the trace line
    /// of the offending step.
    pub fn training(e: PolicyError, trace: &Path) -> Self {
        match e {
            PolicyError::NonFinite { what, step } => CliError::NonFinite {
                message: format!("non-finite {what} at step {step}"),
                // header line, then one line per step
                trace: format!("{}:{}", trace.display(), step + 2),
            },
            other => other.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io { .. } | SynthError::Format { .. } => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Shape { .. } | CheckpointError::Missing(_) | CheckpointError::Unexpected(_) => {
                CliError::Config(format!("checkpoint does not fit the config: {e}"))
            }
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::NonFinite { .. } | PolicyError::Numerics(_) => CliError::Numerics(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

/// `model.ckpt` → `model.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}
