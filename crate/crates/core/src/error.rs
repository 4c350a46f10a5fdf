use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index {index} out of range for dimension {dim}")]
    Index { index: usize, dim: usize },
    #[error("invalid density operator: {0}")]
    InvalidDensity(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("Euler stability violated: T*dt*phi1*gamma_max = {0} >= 0.5")]
    Stability(f64),
    #[error("degenerate channel weight {0}")]
    DegenerateWeight(f64),
    #[error("impossible observation: zero posterior mass")]
    ZeroMass,
    #[error("steady state not reached after {steps} steps (residual {residual:e})")]
    NoSteadyState { steps: usize, residual: f64 },
    #[error("R matrix check failed: {0}")]
    RMatrix(String),
    #[error("dependency graph of R is not strongly connected")]
    NotStronglyConnected,
    #[error("singular reduced system while solving for sigma")]
    Singular,
    #[error("sigma check failed: {0}")]
    Sigma(String),
    #[error("finite-difference step too large: {0}")]
    StepTooLarge(String),
    #[error("path too short: need at least {need} entries, got {got}")]
    PathTooShort { need: usize, got: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
