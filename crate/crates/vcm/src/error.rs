use std::path::{Path, PathBuf};

/// Errors of the IO and orchestration layer. [`VcmError::exit_code`] maps
/// them onto the process exit-code contract.
#[derive(Debug, thiserror::Error)]
pub enum VcmError {
    #[error(transparent)]
    Core(#[from] vcm_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error("ingestion failed for {}", paths_list(.0))]
    Ingestion(Vec<PathBuf>),

    #[error("manifest entry `{entry}`: {reason}")]
    Manifest { entry: String, reason: String },

    #[error("encoder template: {0}")]
    Template(String),

    #[error("environment: {0}")]
    Environment(String),

    #[error("codec exited with {status}: {output}")]
    Codec { status: String, output: String },

    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },
}

fn paths_list(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T, E = VcmError> = std::result::Result<T, E>;

impl VcmError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, reason: impl Into<String>) -> Self {
        Self::Format {
            path: path.as_ref().to_path_buf(),
            reason: reason.into(),
        }
    }

    pub fn manifest(entry: impl Into<String>, reason: impl std::fmt::Display) -> Self {
        Self::Manifest {
            entry: entry.into(),
            reason: reason.to_string(),
        }
    }

    /// 2 for usage and configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            VcmError::Config(_)
            | VcmError::Usage(_)
            | VcmError::Template(_)
            | VcmError::Core(vcm_core::Error::Config { .. })
            | VcmError::Core(vcm_core::Error::Usage(_)) => 2,
            _ => 1,
        }
    }
}

/// Attaches a path to an `io::Result`.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T> {
        self.map_err(|e| VcmError::io(path, e))
    }
}
