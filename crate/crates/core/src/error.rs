use std::path::PathBuf;

/// Errors produced anywhere in the screening toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("structure contains no ATOM records")]
    EmptyStructure,

    #[error("{0}")]
    Ligand(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("empty pocket: {0}")]
    EmptyPocket(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: &'static str },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("missing checkpoint: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 for configuration problems, 3 for
    /// everything related to data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
