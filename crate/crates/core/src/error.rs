use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("missing {0} block")]
    MissingBlock(&'static str),

    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),

    #[error("branch {index} ({from}-{to}) is in service with zero impedance")]
    ZeroImpedance { index: usize, from: u32, to: u32 },

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} p.u.)")]
    PowerFlowNotConverged { iterations: usize, mismatch: f64 },

    #[error("power flow diverged to non-finite values at iteration {0}")]
    PowerFlowDiverged(usize),

    #[error("unobservable measurement schema: {0}")]
    Unobservable(String),

    #[error("probability {0} is outside (0, 1)")]
    InvalidProbability(f64),

    #[error("basis spec lacks required term {0}")]
    MissingBasisTerm(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
