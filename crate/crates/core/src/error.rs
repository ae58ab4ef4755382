use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parameter corruption: {0}")]
    ParameterCorruption(String),

    #[error("ply schema error: {0}")]
    PlySchema(String),

    #[error("ply element {index}: {message}")]
    PlyElement { index: usize, message: String },

    #[error("invalid camera {id}: {message}")]
    Camera { id: usize, message: String },

    #[error("image error: {0}")]
    Image(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("scene is empty")]
    EmptyScene,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
