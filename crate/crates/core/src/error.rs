use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated file: {0}")]
    Truncation(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),
    #[error("entity {entity_id} has an empty effective mask")]
    EmptyMask { entity_id: u64 },
    #[error("alignment diverged at step {step} (loss {loss:e}); retry with a smaller learning rate")]
    Divergence { step: usize, loss: f64 },
    #[error("cannot normalize row {row}: zero norm")]
    Normalization { row: usize },
    #[error("empty batch: {0}")]
    EmptyBatch(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by numerical breakdown rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Divergence { .. } | Error::Normalization { .. })
    }
}
