use std::path::PathBuf;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config schema violations: {}", .0.join("; "))]
    Schema(Vec<String>),

    #[error("wav format error in chunk '{chunk}': {detail}")]
    Format { chunk: String, detail: String },

    #[error("backward already run on this tape; call reset_grads first")]
    BackwardTwice,

    #[error("parameter '{0}' has no gradient")]
    MissingGrad(String),

    #[error("input too short: need at least {needed} samples, got {got}")]
    InputTooShort { needed: usize, got: usize },

    #[error("retention undefined: input has zero energy in band {center_hz} Hz ± {half_width_hz} Hz")]
    UndefinedRetention { center_hz: f64, half_width_hz: f64 },

    #[error("divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("non-finite loss at step {step}: {dump}")]
    NonFiniteLoss { step: usize, dump: String },

    #[error("corpus ingestion failed: {}", .0.join("; "))]
    Ingestion(Vec<String>),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure class, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Runtime,
    Io,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Runtime => 3,
            Category::Io => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Runtime => "runtime",
            Category::Io => "io",
        }
    }
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) | Error::Schema(_) => Category::Config,
            Error::Io { .. } | Error::Format { .. } | Error::Ingestion(_) => Category::Io,
            _ => Category::Runtime,
        }
    }

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
}

pub type Result<T> = std::result::Result<T, Error>;
