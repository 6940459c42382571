use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DigError {
    #[error("backend `{backend}` failed: {reason}")]
    Backend { backend: String, reason: String },
    #[error("every detector failed on scene {scene_id}")]
    AllDetectorsFailed { scene_id: u32 },
    #[error("bbox below minimum size: {width}x{height}")]
    BboxTooSmall { width: u32, height: u32 },
    #[error("no detectors configured")]
    NoDetectors,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {reason}")]
    Log { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Core(#[from] usersod_core::CoreError),
}

pub type Result<T> = std::result::Result<T, DigError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DigError + '_ {
    move |source| DigError::Io {
        path: path.to_path_buf(),
        source,
    }
}
