use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("iterate coincides with the reference solution; the acceleration margin is undefined")]
    ZeroDistance,

    #[error("optimization diverged: {0}")]
    Diverged(String),

    #[error("reference solution for sample {index} is not certified (gap {gap:e} > {tol:e})")]
    Uncertified { index: usize, gap: f64, tol: f64 },

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("missing file {0}")]
    Missing(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { context, expected, got });
    }
    Ok(())
}
