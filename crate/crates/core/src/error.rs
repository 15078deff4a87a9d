//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("voxel spacing {spacing} is coarser than the allowed {limit}")]
    SpacingTooCoarse { spacing: f64, limit: f64 },
    #[error("node shape does not contain port disk of edge {edge}")]
    GeometryOverlap { edge: usize },
    #[error("truncation length {trunc_len} shorter than the required {min}")]
    TruncationTooShort { trunc_len: f64, min: f64 },
    #[error("conservation condition violated, defect = {defect:e}")]
    ConservationViolated { defect: f64 },
    #[error("linear solver diverged after {iterations} iterations (residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("point outside region {region}")]
    OutOfRegion { region: usize },
    #[error("axial velocity on edge {edge} changes sign or has the wrong sign")]
    WrongSign { edge: usize },
    #[error("matching condition violated: {0}")]
    MatchingViolated(String),
    #[error("incompatible Neumann data, defect = {defect:e}")]
    IncompatibleData { defect: f64 },
    #[error("node-layer solvability defect {defect:e} above tolerance")]
    SolvabilityDefect { defect: f64 },
    #[error("node-layer truncation error: cap ratio {ratio:e} above threshold")]
    TruncationError { ratio: f64 },
    #[error("outflow speed {speed} is not positive")]
    NonpositiveOutflowSpeed { speed: f64 },
    #[error("insufficient matching: {0}")]
    InsufficientMatching(String),
    #[error("point outside the junction")]
    OutOfDomain,
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("gamma = {gamma} outside the window ({lo}, 1)")]
    GammaOutOfWindow { gamma: f64, lo: f64 },
    #[error("order M = {m} must exceed {bound}")]
    MOrderTooSmall { m: usize, bound: f64 },
    #[error("support violation: {0}")]
    SupportViolation(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("expression error: {0}")]
    Expr(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
