use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {field}: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("stage violation: {0}")]
    Stage(String),

    #[error("adapter: {0}")]
    Adapter(String),

    #[error("missing image files: {}", .0.join(", "))]
    MissingImages(Vec<String>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("mismatched record sets: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
