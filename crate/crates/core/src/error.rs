use thiserror::Error;

use crate::mlmc::MlmcResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("cannot coarsen an increment block of odd length {0}")]
    OddLength(usize),

    #[error("reference step count {reference} is not divisible by {coarse}")]
    Divisibility { reference: usize, coarse: usize },

    #[error("least-squares fit needs at least two distinct abscissae")]
    DegenerateFit,

    #[error(
        "MLMC did not converge: bias test still failing at l_max = {}",
        .0.levels.last().map(|l| l.level).unwrap_or_default()
    )]
    NonConvergence(Box<MlmcResult>),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
