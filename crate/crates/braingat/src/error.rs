//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: ({a_rows}x{a_cols}) vs ({b_rows}x{b_cols})")]
    ShapeMismatch {
        op: &'static str,
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate time series for region {region}: zero variance")]
    DegenerateSeries { region: usize },

    #[error("invalid distance matrix: negative entry at ({row},{col})")]
    InvalidDistance { row: usize, col: usize },

    #[error("non-finite value during evaluation: {0}")]
    Eval(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
