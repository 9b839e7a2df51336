use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("coordinate {coordinate} = {value} lies outside the chart domain")]
    Domain { coordinate: &'static str, value: f64 },

    #[error("non-finite sample at node ({0}, {1})")]
    NonFinite(usize, usize),

    #[error("wave function vanishes identically")]
    ZeroWaveFunction,

    #[error("{count} interior node(s) below the amplitude floor")]
    NodeSingularity { count: usize, nodes: Vec<(usize, usize)> },

    #[error("eigen-solver failed: {0}")]
    Convergence(String),

    #[error("eigenfunction tail {tail:.3e} at r_max exceeds {limit:.0e}; enlarge the radial domain")]
    DomainTooSmall { tail: f64, limit: f64 },

    #[error("loop value {raw:.6} is {distance:.3} away from the nearest integer {nearest}")]
    QuantizationViolation { raw: f64, nearest: i64, distance: f64 },

    #[error("norm drift {drift:.3e} in one step exceeds {limit:.0e}")]
    NormDrift { drift: f64, limit: f64 },

    #[error("too few samples: {0}")]
    InsufficientData(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
