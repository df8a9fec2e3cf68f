use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid temperature {0}: must be > 0")]
    InvalidTemperature(f64),
    #[error("soft value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },
    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),
    #[error("reward targets are infinite for alpha = {0}")]
    InfiniteTarget(f64),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("inverse dynamics model has no observations")]
    UntrainedModel,
    #[error("expert quality: {0}")]
    ExpertQuality(String),
    #[error("singular linear system")]
    SingularSystem,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
