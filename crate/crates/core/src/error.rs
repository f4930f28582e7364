use thiserror::Error;

use crate::io::config::ConfigError;
use crate::io::snapshot::SnapshotError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("CFL violation: {0}")]
    Cfl(String),
    #[error("admissibility failed: K1·K2 = {product} ≥ 1")]
    Admissibility { product: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
