use std::path::PathBuf;

use crate::modelzoo::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in node {node} ({op})")]
    Numeric { node: usize, op: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("degenerate direction: group `{group}` has zero norm but the parameter group does not")]
    DegenerateDirection { group: String },

    #[error("trajectory differences have rank {rank} < 2")]
    RankDeficient { rank: usize },

    #[error("directions are nearly parallel (|det| = {det:e})")]
    NearParallel { det: f64 },

    #[error("Lanczos broke down after {steps} steps, {converged} of {requested} Ritz pairs available")]
    PartialEigen {
        steps: usize,
        converged: usize,
        requested: usize,
        pairs: Vec<crate::directions::EigenPair>,
    },

    #[error("zero starting vector")]
    ZeroVector,

    #[error("dense Hessian refused: {count} parameters exceeds cap {cap}")]
    OracleCap { count: usize, cap: usize },

    #[error("eigensolver did not converge")]
    NoConvergence,

    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize, partial: Box<Trajectory> },

    #[error("all {0} probes failed")]
    AllProbesFailed(usize),

    #[error("benchmark aborted at {workers} workers: {message}")]
    BenchAborted {
        workers: usize,
        message: String,
        partial: Box<crate::bench::ScalingRun>,
    },

    #[error("missing input {}", .0.display())]
    Missing(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
