use std::path::{Path, PathBuf};

use editbench_core::{BenchError, EditError, KgError, MetricError, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing {path}; {hint}")]
    MissingArtifact { path: PathBuf, hint: &'static str },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("unknown case id {0:?}")]
    UnknownCase(String),
    #[error("unknown split {0:?} (expected single, coverage, reverse, composite, easy or hard)")]
    UnknownSplit(String),
    #[error(transparent)]
    Core(#[from] editbench_core::Error),
}

pub type RunResult<T> = Result<T, RunError>;

impl RunError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, line: usize, msg: impl ToString) -> Self {
        RunError::Parse { path: path.to_path_buf(), line, msg: msg.to_string() }
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for RunError {
            fn from(e: $t) -> Self {
                RunError::Core(e.into())
            }
        }
    )*};
}

via_core!(KgError, ModelError, EditError, BenchError, MetricError);
