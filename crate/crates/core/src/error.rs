use std::path::PathBuf;

use crate::mdp::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("left-truncated variance needs an even number of quantiles, got {0}")]
    OddQuantileCount(usize),

    #[error("target vector is empty")]
    EmptyTargets,

    #[error("perturbation weights collapsed: {0}")]
    DegenerateWeights(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("schedule is not summable: {0}")]
    NotSummable(String),

    #[error("bisection did not converge for level {level}")]
    Bisection { level: f64 },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("MDP failed validation:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("stepping from terminal state {0}")]
    TerminalStep(usize),

    #[error("invariant breach at iteration {n}, entry ({state}, {action}): {message}")]
    InvariantBreach {
        n: usize,
        state: usize,
        action: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  - {x}")).collect::<Vec<_>>().join("\n")
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
