use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid {what}: {reason}")]
    Config { what: &'static str, reason: String },
    #[error("training diverged at epoch {epoch}, step {step}: non-finite {quantity}")]
    Diverged {
        epoch: usize,
        step: usize,
        quantity: &'static str,
    },
    #[error("frozen parameters under `{prefix}` changed during training")]
    FrozenDrift { prefix: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] usersod_core::CoreError),
    #[error(transparent)]
    Model(#[from] usersod_model::ModelError),
    #[error(transparent)]
    Metrics(#[from] usersod_metrics::MetricsError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}
