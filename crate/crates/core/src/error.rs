use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("degenerate latent: interpolated latent has norm {0:e}")]
    DegenerateLatent(f64),

    #[error("landmark topology mismatch: {0} vs {1} landmarks")]
    Topology(usize, usize),

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no bona fide image available for identity {0}")]
    Coverage(u32),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("score alignment error: {0}")]
    Alignment(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Misuse(_) => 1,
            Error::Shape(_) | Error::Numeric(_) | Error::Divergence { .. } => 3,
            Error::DegenerateLatent(_) => 3,
            _ => 2,
        }
    }
}
