use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::OptimizerReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("degenerate demand: every product has a closed gate")]
    DegenerateDemand,

    #[error("invalid reference: reference share {0} is not strictly positive")]
    InvalidReference(f64),

    #[error("bandwidth error: {0}")]
    Bandwidth(String),

    #[error("optimization failed: {message}")]
    OptimizationFailure {
        message: String,
        report: Box<OptimizerReport>,
    },

    #[error("perfect separation: outcomes are separated along direction {direction:?}")]
    PerfectSeparation { direction: Vec<f64> },

    #[error("rank deficiency in {what}: null direction {null_direction:?}")]
    RankDeficient {
        what: &'static str,
        null_direction: Vec<f64>,
    },

    #[error("under-identified: {instruments} instruments for {regressors} regressors")]
    UnderIdentified {
        instruments: usize,
        regressors: usize,
    },

    #[error("estimator failure: {0}")]
    Estimation(String),

    #[error("invalid dataset:\n  {}", .0.join("\n  "))]
    InvalidDataset(Vec<String>),

    #[error("infeasible market size for market {market}: size {size} < total quantity {total}")]
    InfeasibleMarketSize {
        market: String,
        size: f64,
        total: f64,
    },

    #[error("degenerate density estimate: {0}")]
    DegenerateDensity(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
