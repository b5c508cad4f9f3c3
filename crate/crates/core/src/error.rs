use std::path::PathBuf;

use rfmo_lp::LpError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("structure partition: {0}")]
    Partition(String),
    #[error("negative influence value {value} at voxel {voxel}, beamlet {beamlet}")]
    Negative { voxel: usize, beamlet: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("uncertainty set is empty (voxel {0} has lower bound above upper bound)")]
    EmptyUncertainty(usize),
    #[error("subproblem unbounded: {0}")]
    Unbounded(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("size guard: {0}")]
    TooLarge(String),
    #[error("iteration guard reached after {0} iterations")]
    IterationGuard(usize),
    #[error(transparent)]
    Lp(#[from] LpError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
