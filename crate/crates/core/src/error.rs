use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("empty prediction set for state {state}, action {action}")]
    EmptyPrediction { state: usize, action: usize },

    #[error("formula inapplicable: {0}")]
    FormulaInapplicable(String),

    #[error("rapid-failure assumption fails: {0}")]
    AssumptionViolated(String),

    #[error("non-finite loss in {context}: {value}")]
    NonFiniteLoss { context: String, value: f64 },

    #[error("episode is over; call reset before stepping again")]
    EpisodeOver,

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("output directory {} already exists; pass --force to replace it", .0.display())]
    OutputExists(std::path::PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether the error comes from how the tool was invoked or configured.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidArgument(_) | Error::OutputExists(_)
        )
    }
}
