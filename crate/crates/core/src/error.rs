use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("routing error: {0}")]
    Routing(String),
    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),
    #[error("layer state error: {0}")]
    State(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),
    #[error("zero normalizer: {0}")]
    ZeroNormalizer(String),
    #[error("undefined rate: {0}")]
    UndefinedRate(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("load error in {path}: {msg}")]
    Load { path: PathBuf, msg: String },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn load(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Load { path: path.into(), msg: msg.into() }
    }
}
