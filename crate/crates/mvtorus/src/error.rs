use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("mode {mode:?} outside resolved band |k_i| < {limit}")]
    Truncation { mode: [i64; 2], limit: usize },
    #[error("resolution mismatch: {0}")]
    Resolution(String),
    #[error("degenerate dominant mode: {0}")]
    Degenerate(String),
    #[error("unavailable: {0}")]
    Unavailable(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
