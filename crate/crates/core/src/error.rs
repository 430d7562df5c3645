use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} {value} out of range (max {max})")]
    OutOfRange { what: &'static str, value: i64, max: i64 },

    #[error("force {value} at ({row}, {col}) outside [0, 9] N")]
    InvalidForce { row: usize, col: usize, value: f64 },

    #[error("intensity {value} at ({row}, {col}) outside [0, 1]")]
    InvalidIntensity { row: usize, col: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("line {line}: {message}")]
    ParseLine { line: usize, message: String },

    #[error("target ({x:.3}, {y:.3}) mm is outside the linkage workspace")]
    OutOfWorkspace { x: f64, y: f64 },

    #[error("kinematic singularity: {0}")]
    Singular(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("sink failed: {0}")]
    Sink(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
