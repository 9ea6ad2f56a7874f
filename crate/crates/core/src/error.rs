//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("grid: {0}")]
    Grid(String),
    #[error("inadmissible deformation: {0}")]
    Inadmissible(String),
    #[error("input is not mean-zero: {0}")]
    MeanZero(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("quadrature self-check failed: {0}")]
    Quadrature(String),
    #[error("target too close to the surface: {0}")]
    TargetTooClose(String),
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}
