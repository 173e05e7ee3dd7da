use thiserror::Error;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("scheme error: {0}")]
    Scheme(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("label id {id} out of range for label space of size {count}")]
    LabelOutOfRange { id: usize, count: usize },

    #[error("character id {id} out of range for vocabulary of size {size}")]
    CharOutOfRange { id: usize, size: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model file error: {0}")]
    Model(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
