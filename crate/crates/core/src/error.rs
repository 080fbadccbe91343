use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    Version {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no convergence after {steps} steps (last relative increment {last_increment:.3e})")]
    NonConvergence { steps: usize, last_increment: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("singular reduced system: {0}")]
    SingularReducedSystem(String),

    #[error("EIM residual degenerate at M = {m} (max residual {residual:.3e}) before tolerance was met")]
    DegenerateResidual { m: usize, residual: f64 },

    #[error("eigensolver failed: {0}")]
    EigenSolveFailure(String),

    #[error("inf-sup factor is not positive at mu = {mu}: {beta:.3e}")]
    NonpositiveBeta { mu: f64, beta: f64 },

    #[error("POD requested {requested} modes but the snapshot set has numerical rank {rank}")]
    RankDeficiency { requested: usize, rank: usize },

    #[error("greedy stagnation: mu = {mu} is already in the reduced basis")]
    Stagnation { mu: f64 },

    #[error("greedy error bound rose from {from:.3e} to {to:.3e}")]
    EstimatorIncrease { from: f64, to: f64 },

    #[error("error bound violated at mu = {mus:?}")]
    BoundViolation { mus: Vec<f64> },

    #[error("fixed point did not converge in {iterations} iterations (best estimate {best:.6e})")]
    MaxIterations { iterations: usize, best: f64 },

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn dims(what: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for failures of the numerical methods (as opposed to I/O or
    /// configuration problems).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonConvergence { .. }
            | Error::SingularSystem(_)
            | Error::SingularReducedSystem(_)
            | Error::DegenerateResidual { .. }
            | Error::EigenSolveFailure(_)
            | Error::NonpositiveBeta { .. }
            | Error::RankDeficiency { .. }
            | Error::Stagnation { .. }
            | Error::EstimatorIncrease { .. }
            | Error::BoundViolation { .. }
            | Error::MaxIterations { .. } => true,
            Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
