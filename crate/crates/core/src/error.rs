use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("adjacency is not symmetric: A[{i},{j}]={a_ij} but A[{j},{i}]={a_ji}")]
    Asymmetric {
        i: usize,
        j: usize,
        a_ij: f64,
        a_ji: f64,
    },

    #[error("{count} missing (NaN) values present; enable imputation to fill them")]
    MissingValues { count: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("graph has no edges above the threshold")]
    EmptyGraph,

    #[error("requested {requested} non-trivial eigenvectors but only {available} are available")]
    Rank { requested: usize, available: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("checkpoint manifest disagrees with payload: {0}")]
    Manifest(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures raised by the optimizer or the training loop.
    pub fn is_training(&self) -> bool {
        matches!(self.root(), Error::Training(_))
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
