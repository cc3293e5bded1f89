use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{path}: truncated payload, header declares {expected} bytes but {found} are present")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: payload holds {found} bytes, header declares {expected}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: malformed data: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}:{line}:{column}: malformed manifest: {detail}")]
    Manifest {
        path: PathBuf,
        line: usize,
        column: usize,
        detail: String,
    },

    #[error("{path}:{line}:{column}: malformed config: {detail}")]
    Config {
        path: PathBuf,
        line: usize,
        column: usize,
        detail: String,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },

    #[error("missing artifact: {0}")]
    Missing(PathBuf),

    #[error("batchnorm evaluated before any running statistics were recorded")]
    NoRunningStats,
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 2 I/O, 3 format, 4 numeric failure,
    /// 5 missing artifact, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::SizeMismatch { .. }
            | Error::Format { .. }
            | Error::Manifest { .. }
            | Error::Config { .. } => 3,
            Error::NonFiniteLoss { .. } => 4,
            Error::Missing(_) => 5,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
