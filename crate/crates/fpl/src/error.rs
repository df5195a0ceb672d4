use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum FplError {
    #[error("item index {item} out of catalog bounds (|I| = {catalog})")]
    CatalogBounds { item: usize, catalog: usize },

    #[error("invalid triple: positive and negative item coincide ({item})")]
    InvalidTriple { item: usize },

    #[error("untrainable client {user}: {reason}")]
    UntrainableClient { user: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("protocol error: sender {sender} sent out-of-catalog item {item} (|I| = {catalog})")]
    Protocol {
        sender: usize,
        item: usize,
        catalog: usize,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FplError>;
