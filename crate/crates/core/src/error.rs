//! Error types for every stage of the pipeline.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate particle spec: radius clamp hit on {clamped} of {total} vertices")]
    DegenerateSpec { clamped: usize, total: usize },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("OFF parse error at line {line}: {msg}")]
    OffParse { line: usize, msg: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("non-finite matrix entry at (row {row}, col {col})")]
    Assembly { row: usize, col: usize },
    #[error("system is singular or ill-conditioned (condition estimate {condition:.3e})")]
    Conditioning { condition: f64 },
    #[error("symmetry operation {index} does not map the mesh onto itself")]
    Symmetry { index: usize },
    #[error("partial-wave series not converged: |j_n/h_n| = {ratio:.3e} at n = {n_terms}")]
    SeriesNotConverged { n_terms: usize, ratio: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid argument to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        TensorError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Invalid {
            op,
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("non-finite gradient for parameter `{0}`; step refused")]
    NonFiniteGradient(String),
    #[error("parameter/gradient mismatch: {0}")]
    Mismatch(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("unknown sample id {0}")]
    UnknownId(u64),
    #[error("too many solver failures: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("missing prerequisite: {0}")]
    Dependency(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
