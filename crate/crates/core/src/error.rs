use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-causal pair: source time {source_time} is not before target time {target_time}")]
    NonCausalPair { source_time: f64, target_time: f64 },

    #[error("location ({x}, {y}) lies outside the spatial domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("invalid event sequence: {} violation(s), first: {:?}", .0.len(), .0.first())]
    InvalidSequence(Vec<Violation>),

    #[error("non-positive intensity {value} at event {index} of sequence {sequence}")]
    NonPositiveIntensityAtEvent { sequence: usize, index: usize, value: f64 },

    #[error("precomputed integrals do not match the model or sequence: {0}")]
    GridMismatch(String),

    #[error("intensity bound raised {raises} times for a single event near t = {t}")]
    BoundViolationLoop { t: f64, raises: usize },

    #[error("simulation of trajectory {index} failed: {source}")]
    Trajectory { index: usize, source: Box<Error> },

    #[error("too few events for a goodness-of-fit test: {n} < {min}")]
    TooFewEvents { n: usize, min: usize },

    #[error("negative intensity {value} at t = {t} on the forecast window")]
    NegativeIntensity { t: f64, value: f64 },

    #[error("residual tail mass {mass} exceeds tolerance {tolerance}")]
    TailMassTooLarge { mass: f64, tolerance: f64 },

    #[error("matrix is not square: {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("node {node} out of range for a graph with {nodes} nodes")]
    NodeOutOfRange { node: usize, nodes: usize },

    #[error("insufficient history: time index {index} < memory depth {depth}")]
    InsufficientHistory { index: usize, depth: usize },

    #[error("projection cannot restore feasibility: {0}")]
    Infeasible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
