use thiserror::Error;

/// Errors raised by the inference library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for domain of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("design calibration failed: {0}")]
    Calibration(String),

    #[error("degenerate column {column}: nodewise residual variance {tau_sq:e}")]
    DegenerateColumn { column: usize, tau_sq: f64 },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("saturated fit: {active} active coefficients for {samples} samples")]
    SaturatedFit { active: usize, samples: usize },

    #[error("infeasible partition: adjacency graph has {components} components, {requested} clusters requested")]
    InfeasiblePartition { components: usize, requested: usize },

    #[error("degenerate group {group}: zero within-group covariance mass")]
    DegenerateGroup { group: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("bootstrap {index} failed: {source}")]
    Bootstrap {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
