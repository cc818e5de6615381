use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An observation that is non-finite or outside the model support.
    #[error("observation {x} is outside the support {support}")]
    Domain { x: f64, support: String },

    #[error("{0} is not supported by this model")]
    Unsupported(&'static str),

    /// Quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge on [{lower}, {upper}]: residual {residual:e}")]
    Quadrature {
        lower: f64,
        upper: f64,
        residual: f64,
    },

    /// A detector statistic became NaN.
    #[error("statistic became NaN at time {time} (observation {observation})")]
    NanStatistic { time: usize, observation: f64 },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
